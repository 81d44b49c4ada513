#include "raise/kernels.hpp"

#include <cmath>
#include <cstring>

namespace ranking::kernels {
namespace scalar {

void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    // i-k-j order: each c[i][j] accumulates over k sequentially. The AVX2
    // variant replicates this order exactly.
    for (size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::memset(crow, 0, n * sizeof(double));
        const double* arow = a + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + kk * n;
            for (size_t j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

void relu(const double* x, double* y, size_t len) {
    for (size_t i = 0; i < len; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, size_t len) {
    for (size_t i = 0; i < len; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void axpy(double alpha, const double* x, double* y, size_t len) {
    for (size_t i = 0; i < len; ++i) y[i] += alpha * x[i];
}

void add(const double* x, const double* y, double* out, size_t len) {
    for (size_t i = 0; i < len; ++i) out[i] = x[i] + y[i];
}

void sub(const double* x, const double* y, double* out, size_t len) {
    for (size_t i = 0; i < len; ++i) out[i] = x[i] - y[i];
}

void mul(const double* x, const double* y, double* out, size_t len) {
    for (size_t i = 0; i < len; ++i) out[i] = x[i] * y[i];
}

void scale(const double* x, double alpha, double* out, size_t len) {
    for (size_t i = 0; i < len; ++i) out[i] = x[i] * alpha;
}

void adam_update(double* w, double* m, double* v, const double* g, size_t len,
                 double lr, double beta1, double beta2, double eps,
                 double b1t, double b2t) {
    const double omb1 = 1.0 - beta1;
    const double omb2 = 1.0 - beta2;
    const double c1 = 1.0 - b1t;
    const double c2 = 1.0 - b2t;
    for (size_t i = 0; i < len; ++i) {
        m[i] = beta1 * m[i] + omb1 * g[i];
        v[i] = beta2 * v[i] + omb2 * (g[i] * g[i]);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = w[i] - (lr * mhat) / (std::sqrt(vhat) + eps);
    }
}

}  // namespace scalar

const Ops& scalar_ops() {
    static const Ops table = {
        "scalar",
        scalar::matmul,
        scalar::relu,
        scalar::relu_backward,
        scalar::axpy,
        scalar::add,
        scalar::sub,
        scalar::mul,
        scalar::scale,
        scalar::adam_update,
    };
    return table;
}

}  // namespace ranking::kernels
