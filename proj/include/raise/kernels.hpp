#pragma once

#include <cstddef>
#include <cstdint>

namespace ranking::kernels {

// Table of the data-parallel inner loops everything else is built from.
// Two implementations exist: a scalar reference and an AVX2 variant selected
// at runtime. Both execute the same operations in the same order (the AVX2
// matmul keeps the scalar i-k-j accumulation order and uses separate
// multiply/add, never FMA), so results are bit-identical across paths and a
// run is reproducible regardless of which table the host selects.
struct Ops {
    const char* name;

    // c = a (m x k) * b (k x n), all row-major; c is overwritten.
    void (*matmul)(const double* a, const double* b, double* c,
                   size_t m, size_t k, size_t n);
    // y = max(x, 0); derivative at exactly 0 is defined as 0.
    void (*relu)(const double* x, double* y, size_t len);
    // dx = x > 0 ? dy : 0
    void (*relu_backward)(const double* x, const double* dy, double* dx, size_t len);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, size_t len);
    void (*add)(const double* x, const double* y, double* out, size_t len);
    void (*sub)(const double* x, const double* y, double* out, size_t len);
    void (*mul)(const double* x, const double* y, double* out, size_t len);
    void (*scale)(const double* x, double alpha, double* out, size_t len);
    // One bias-corrected Adam update; b1t = beta1^step, b2t = beta2^step.
    void (*adam_update)(double* w, double* m, double* v, const double* g, size_t len,
                        double lr, double beta1, double beta2, double eps,
                        double b1t, double b2t);
};

const Ops& scalar_ops();
const Ops& avx2_ops();     // entries fall back to scalar when not compiled in
bool avx2_compiled();
bool avx2_available();     // compiled in and supported by this CPU

// Active table. Defaults to the best supported variant; the RAISE_KERNELS
// environment variable ("scalar" or "avx2") and select() override it.
const Ops& active();
void select(const char* name);

// Multiply-add instrumentation. While counting is enabled active() routes
// through wrappers that tally one count per scalar multiply-accumulate the
// wrapped kernels perform (matmul: m*k*n, axpy: len). Pure multiplies,
// additions, comparisons, exp and division are not multiply-adds and count
// zero. Single-threaded by design.
void counting_begin();
uint64_t counting_end();
uint64_t counting_value();
bool counting_enabled();

}  // namespace ranking::kernels
