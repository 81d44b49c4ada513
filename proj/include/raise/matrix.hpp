#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "raise/errors.hpp"

namespace ranking {

// Row-major dense matrix of 64-bit reals; the carrier for every tensor in
// the project. Vectors are 1 x d matrices.
struct DenseMatrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(size_t r, size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
    DenseMatrix(size_t r, size_t c, std::vector<double> v)
        : rows(r), cols(c), values(std::move(v)) {
        if (values.size() != rows * cols)
            throw DimensionError("DenseMatrix: values length " +
                                 std::to_string(values.size()) + " != " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
    }

    size_t size() const { return rows * cols; }
    double* data() { return values.data(); }
    const double* data() const { return values.data(); }
    double* row(size_t r) { return values.data() + r * cols; }
    const double* row(size_t r) const { return values.data() + r * cols; }
    double& at(size_t r, size_t c) { return values[r * cols + c]; }
    double at(size_t r, size_t c) const { return values[r * cols + c]; }
    double& operator()(size_t r, size_t c) { return values[r * cols + c]; }
    double operator()(size_t r, size_t c) const { return values[r * cols + c]; }

    bool same_shape(const DenseMatrix& o) const {
        return rows == o.rows && cols == o.cols;
    }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    void fill(double v) { values.assign(values.size(), v); }

    bool all_finite() const {
        for (double x : values)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline void check_finite(const DenseMatrix& m, const std::string& what) {
    if (!m.all_finite())
        throw NumericError("non-finite values in " + what);
}

}  // namespace ranking
