#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "raise/matrix.hpp"

namespace ranking {

// ---- matrix operations (dispatched to the active kernel table) ----

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& m);
DenseMatrix relu(const DenseMatrix& m);
// dx for y = relu(x), given x and dy; derivative at 0 is 0.
DenseMatrix relu_backward(const DenseMatrix& x, const DenseMatrix& dy);

// Row-wise softmax with per-row max subtraction.
DenseMatrix softmax_rows(const DenseMatrix& m);
// dx for s = softmax_rows(x): per row, dx = s * (ds - <ds, s>).
DenseMatrix softmax_rows_backward(const DenseMatrix& s, const DenseMatrix& ds);

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double alpha);
void add_inplace(DenseMatrix& a, const DenseMatrix& b);
void axpy_inplace(DenseMatrix& y, double alpha, const DenseMatrix& x);  // y += alpha*x

// Sum of each column as a 1 x cols matrix (bias gradients).
DenseMatrix column_sums(const DenseMatrix& m);
// Adds the 1 x cols bias row to every row of m.
DenseMatrix add_row_broadcast(const DenseMatrix& m, const DenseMatrix& bias);

double dot(const DenseMatrix& a, const DenseMatrix& b);  // Frobenius inner product

// ---- initialization ----

// Uniform Glorot: entries in [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))],
// drawn row-major from an Rng seeded with `seed`. Deterministic.
DenseMatrix glorot_init(size_t rows, size_t cols, uint64_t seed);

// ---- trainable parameter + Adam ----

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Parameter {
    std::string name;
    DenseMatrix value;
    DenseMatrix grad;
    DenseMatrix adam_m;
    DenseMatrix adam_v;
    uint64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string n, DenseMatrix v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(value.rows, value.cols),
          adam_m(value.rows, value.cols),
          adam_v(value.rows, value.cols) {}

    void zero_grad() { grad.fill(0.0); }
};

// Bias-corrected Adam step on p.value from p.grad; advances moments and
// step_count, then zeroes the gradient. Throws NumericError naming the
// parameter if the gradient is non-finite.
void adam_step(Parameter& p, const AdamHyper& h);

// Central finite differences of `loss` with respect to every entry of
// p.value: (loss(x+eps) - loss(x-eps)) / (2 eps). `loss` is re-evaluated
// with the perturbed parameter in place; p.value is restored afterwards.
// Throws NumericError if the loss is non-finite.
DenseMatrix finite_diff_grad(const std::function<double()>& loss, Parameter& p, double eps);

}  // namespace ranking
