// AVX2 variants of the kernel table. Compiled with -mavx2 (no -mfma) and
// -ffp-contract=off: every vector lane performs the same multiply-then-add
// sequence as the scalar reference, in the same order, so outputs are
// bit-identical to scalar_ops(). Equivalence is asserted by test_kernels.

#include "raise/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define RAISE_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#else
#define RAISE_HAVE_AVX2_BUILD 0
#endif

#include <cmath>
#include <cstring>

namespace ranking::kernels {

#if RAISE_HAVE_AVX2_BUILD

namespace avx2 {

void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::memset(crow, 0, n * sizeof(double));
        const double* arow = a + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const __m256d av = _mm256_set1_pd(aik);
            const double* brow = b + kk * n;
            size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(crow + j);
                const __m256d bv = _mm256_loadu_pd(brow + j);
                cv = _mm256_add_pd(cv, _mm256_mul_pd(av, bv));
                _mm256_storeu_pd(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void relu(const double* x, double* y, size_t len) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        // max(x, 0): returns the second operand on ties, matching x > 0 ? x : 0.
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < len; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, size_t len) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
    }
    for (; i < len; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void axpy(double alpha, const double* x, double* y, size_t len) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        const __m256d yv = _mm256_loadu_pd(y + i);
        const __m256d xv = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, _mm256_mul_pd(av, xv)));
    }
    for (; i < len; ++i) y[i] += alpha * x[i];
}

void add(const double* x, const double* y, double* out, size_t len) {
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        _mm256_storeu_pd(out + i,
                         _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < len; ++i) out[i] = x[i] + y[i];
}

void sub(const double* x, const double* y, double* out, size_t len) {
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        _mm256_storeu_pd(out + i,
                         _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < len; ++i) out[i] = x[i] - y[i];
}

void mul(const double* x, const double* y, double* out, size_t len) {
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        _mm256_storeu_pd(out + i,
                         _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < len; ++i) out[i] = x[i] * y[i];
}

void scale(const double* x, double alpha, double* out, size_t len) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), av));
    }
    for (; i < len; ++i) out[i] = x[i] * alpha;
}

void adam_update(double* w, double* m, double* v, const double* g, size_t len,
                 double lr, double beta1, double beta2, double eps,
                 double b1t, double b2t) {
    const double omb1 = 1.0 - beta1;
    const double omb2 = 1.0 - beta2;
    const double c1 = 1.0 - b1t;
    const double c2 = 1.0 - b2t;
    const __m256d b1v = _mm256_set1_pd(beta1);
    const __m256d b2v = _mm256_set1_pd(beta2);
    const __m256d omb1v = _mm256_set1_pd(omb1);
    const __m256d omb2v = _mm256_set1_pd(omb2);
    const __m256d c1v = _mm256_set1_pd(c1);
    const __m256d c2v = _mm256_set1_pd(c2);
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d epsv = _mm256_set1_pd(eps);
    size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        mv = _mm256_add_pd(_mm256_mul_pd(b1v, mv), _mm256_mul_pd(omb1v, gv));
        vv = _mm256_add_pd(_mm256_mul_pd(b2v, vv),
                           _mm256_mul_pd(omb2v, _mm256_mul_pd(gv, gv)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_div_pd(mv, c1v);
        const __m256d vhat = _mm256_div_pd(vv, c2v);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
        const __m256d wv = _mm256_loadu_pd(w + i);
        _mm256_storeu_pd(w + i,
                         _mm256_sub_pd(wv, _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom)));
    }
    for (; i < len; ++i) {
        m[i] = beta1 * m[i] + omb1 * g[i];
        v[i] = beta2 * v[i] + omb2 * (g[i] * g[i]);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = w[i] - (lr * mhat) / (std::sqrt(vhat) + eps);
    }
}

}  // namespace avx2

bool avx2_compiled() { return true; }

const Ops& avx2_ops() {
    static const Ops table = {
        "avx2",
        avx2::matmul,
        avx2::relu,
        avx2::relu_backward,
        avx2::axpy,
        avx2::add,
        avx2::sub,
        avx2::mul,
        avx2::scale,
        avx2::adam_update,
    };
    return table;
}

#else  // !RAISE_HAVE_AVX2_BUILD

bool avx2_compiled() { return false; }

const Ops& avx2_ops() { return scalar_ops(); }

#endif

}  // namespace ranking::kernels
