#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rvlm/error.hpp"

namespace rvlm {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
}

}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require_same_size(a.size(), b.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y = A x + b
inline Vector affine(const Matrix& a, std::span<const double> x, std::span<const double> b) {
    detail::require_same_size(a.cols, x.size(), "affine (input)");
    detail::require_same_size(a.rows, b.size(), "affine (bias)");
    Vector y(b.begin(), b.end());
    for (std::size_t r = 0; r < a.rows; ++r) y[r] += dot(a.row(r), x);
    return y;
}

/// y = A^T x
inline Vector transpose_times(const Matrix& a, std::span<const double> x) {
    detail::require_same_size(a.rows, x.size(), "transpose_times");
    Vector y(a.cols, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols; ++c) y[c] += row[c] * xr;
    }
    return y;
}

/// A += alpha * u v^T
inline void add_outer(Matrix& a, double alpha, std::span<const double> u, std::span<const double> v) {
    detail::require_same_size(a.rows, u.size(), "add_outer (rows)");
    detail::require_same_size(a.cols, v.size(), "add_outer (cols)");
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double ur = alpha * u[r];
        if (ur == 0.0) continue;
        auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols; ++c) row[c] += ur * v[c];
    }
}

/// Arithmetic mean over the rows of a matrix.
inline Vector row_mean(const Matrix& m) {
    if (m.rows == 0) throw ShapeError("row_mean: empty matrix");
    Vector mean(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) mean[c] += row[c];
    }
    for (double& x : mean) x /= static_cast<double>(m.rows);
    return mean;
}

}  // namespace rvlm
