#include "raise/numerics.hpp"

#include <cmath>

#include "raise/kernels.hpp"
#include "raise/rng.hpp"

namespace ranking {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: " + a.shape_str() + " x " + b.shape_str());
    DenseMatrix c(a.rows, b.cols);
    kernels::active().matmul(a.data(), b.data(), c.data(), a.rows, a.cols, b.cols);
    return c;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix t(m.cols, m.rows);
    for (size_t r = 0; r < m.rows; ++r)
        for (size_t c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
    return t;
}

DenseMatrix relu(const DenseMatrix& m) {
    DenseMatrix y(m.rows, m.cols);
    kernels::active().relu(m.data(), y.data(), m.size());
    return y;
}

DenseMatrix relu_backward(const DenseMatrix& x, const DenseMatrix& dy) {
    if (!x.same_shape(dy))
        throw DimensionError("relu_backward: " + x.shape_str() + " vs " + dy.shape_str());
    DenseMatrix dx(x.rows, x.cols);
    kernels::active().relu_backward(x.data(), dy.data(), dx.data(), x.size());
    return dx;
}

DenseMatrix softmax_rows(const DenseMatrix& m) {
    DenseMatrix out(m.rows, m.cols);
    for (size_t r = 0; r < m.rows; ++r) {
        const double* x = m.row(r);
        double* y = out.row(r);
        double mx = x[0];
        for (size_t c = 1; c < m.cols; ++c)
            if (x[c] > mx) mx = x[c];
        double sum = 0.0;
        for (size_t c = 0; c < m.cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            sum += y[c];
        }
        kernels::active().scale(y, 1.0 / sum, y, m.cols);
    }
    return out;
}

DenseMatrix softmax_rows_backward(const DenseMatrix& s, const DenseMatrix& ds) {
    if (!s.same_shape(ds))
        throw DimensionError("softmax_rows_backward: " + s.shape_str() + " vs " +
                             ds.shape_str());
    DenseMatrix dx(s.rows, s.cols);
    for (size_t r = 0; r < s.rows; ++r) {
        const double* sv = s.row(r);
        const double* dv = ds.row(r);
        double inner = 0.0;
        for (size_t c = 0; c < s.cols; ++c) inner += dv[c] * sv[c];
        double* out = dx.row(r);
        for (size_t c = 0; c < s.cols; ++c) out[c] = sv[c] * (dv[c] - inner);
    }
    return dx;
}

namespace {
void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": " + a.shape_str() + " vs " +
                             b.shape_str());
}
}  // namespace

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "add");
    DenseMatrix out(a.rows, a.cols);
    kernels::active().add(a.data(), b.data(), out.data(), a.size());
    return out;
}

DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "sub");
    DenseMatrix out(a.rows, a.cols);
    kernels::active().sub(a.data(), b.data(), out.data(), a.size());
    return out;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "hadamard");
    DenseMatrix out(a.rows, a.cols);
    kernels::active().mul(a.data(), b.data(), out.data(), a.size());
    return out;
}

DenseMatrix scale(const DenseMatrix& a, double alpha) {
    DenseMatrix out(a.rows, a.cols);
    kernels::active().scale(a.data(), alpha, out.data(), a.size());
    return out;
}

void add_inplace(DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "add_inplace");
    kernels::active().add(a.data(), b.data(), a.data(), a.size());
}

void axpy_inplace(DenseMatrix& y, double alpha, const DenseMatrix& x) {
    require_same_shape(y, x, "axpy_inplace");
    kernels::active().axpy(alpha, x.data(), y.data(), y.size());
}

DenseMatrix column_sums(const DenseMatrix& m) {
    DenseMatrix out(1, m.cols);
    for (size_t r = 0; r < m.rows; ++r)
        kernels::active().add(out.data(), m.row(r), out.data(), m.cols);
    return out;
}

DenseMatrix add_row_broadcast(const DenseMatrix& m, const DenseMatrix& bias) {
    if (bias.rows != 1 || bias.cols != m.cols)
        throw DimensionError("add_row_broadcast: " + m.shape_str() + " + " +
                             bias.shape_str());
    DenseMatrix out(m.rows, m.cols);
    for (size_t r = 0; r < m.rows; ++r)
        kernels::active().add(m.row(r), bias.data(), out.row(r), m.cols);
    return out;
}

double dot(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    const double* x = a.data();
    const double* y = b.data();
    for (size_t i = 0; i < a.size(); ++i) s += x[i] * y[i];
    return s;
}

DenseMatrix glorot_init(size_t rows, size_t cols, uint64_t seed) {
    DenseMatrix m(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng(seed);
    for (double& v : m.values) v = rng.uniform(-limit, limit);
    return m;
}

void adam_step(Parameter& p, const AdamHyper& h) {
    if (!p.grad.all_finite())
        throw NumericError("adam_step: non-finite gradient for parameter '" + p.name + "'");
    p.step_count += 1;
    const double b1t = std::pow(h.beta1, static_cast<double>(p.step_count));
    const double b2t = std::pow(h.beta2, static_cast<double>(p.step_count));
    kernels::active().adam_update(p.value.data(), p.adam_m.data(), p.adam_v.data(),
                                  p.grad.data(), p.value.size(), h.lr, h.beta1, h.beta2,
                                  h.eps, b1t, b2t);
    p.zero_grad();
}

DenseMatrix finite_diff_grad(const std::function<double()>& loss, Parameter& p, double eps) {
    DenseMatrix g(p.value.rows, p.value.cols);
    for (size_t i = 0; i < p.value.size(); ++i) {
        const double saved = p.value.values[i];
        p.value.values[i] = saved + eps;
        const double up = loss();
        p.value.values[i] = saved - eps;
        const double down = loss();
        p.value.values[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("finite_diff_grad: non-finite loss near parameter '" +
                               p.name + "'");
        g.values[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

}  // namespace ranking
