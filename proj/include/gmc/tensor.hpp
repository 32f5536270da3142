/*
 *   Copyright 2026 The gmcomplete Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "gmc/errors.hpp"
#include "gmc/exact.hpp"
#include "gmc/rng.hpp"

namespace gmc {

using index_t = std::ptrdiff_t;

/// Dense row-major matrix of 64-bit floats. All reductions over entries use
/// exact accumulation (see exact.hpp), so results are invariant under row
/// reordering of the operands.
class Tensor {
public:
    Tensor() : rows_(0), cols_(0) {}

    Tensor(index_t rows, index_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(std::size_t(rows * cols), fill) {
        if (rows < 0 || cols < 0) throw dimension_error("tensor: negative dimension");
    }

    Tensor(index_t rows, index_t cols, std::initializer_list<double> vals) : Tensor(rows, cols) {
        if (index_t(vals.size()) != rows * cols) throw dimension_error("tensor: initializer size mismatch");
        std::copy(vals.begin(), vals.end(), v_.begin());
    }

    static Tensor zeros(index_t r, index_t c) { return Tensor(r, c); }

    static Tensor identity(index_t n) {
        Tensor t(n, n);
        for (index_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    static Tensor randn(index_t r, index_t c, Rng& rng) {
        Tensor t(r, c);
        for (auto& x : t.v_) x = rng.normal();
        return t;
    }

    static Tensor rand_uniform(index_t r, index_t c, Rng& rng, double lo = 0.0, double hi = 1.0) {
        Tensor t(r, c);
        for (auto& x : t.v_) x = rng.uniform(lo, hi);
        return t;
    }

    index_t rows() const { return rows_; }
    index_t cols() const { return cols_; }
    index_t size() const { return rows_ * cols_; }

    double& operator()(index_t i, index_t j) { return v_[std::size_t(i * cols_ + j)]; }
    double operator()(index_t i, index_t j) const { return v_[std::size_t(i * cols_ + j)]; }
    double& operator[](index_t k) { return v_[std::size_t(k)]; }
    double operator[](index_t k) const { return v_[std::size_t(k)]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double* row(index_t i) { return v_.data() + i * cols_; }
    const double* row(index_t i) const { return v_.data() + i * cols_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_; }

    Tensor transposed() const {
        Tensor t(cols_, rows_);
        for (index_t i = 0; i < rows_; ++i)
            for (index_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }

    /// Exact sum of all entries.
    double sum() const { return exact_sum(v_.data(), v_.size()); }

    /// Exact sum of squares.
    double frob_sq() const {
        ExactAcc acc;
        for (double x : v_) acc.add(x * x);
        return acc.value();
    }

    double frob() const { return std::sqrt(frob_sq()); }

private:
    index_t rows_, cols_;
    std::vector<double> v_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw dimension_error(std::string(where) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

// ---- elementwise ----

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "tensor: add");
    Tensor c(a.rows(), a.cols());
    for (index_t k = 0; k < a.size(); ++k) c[k] = a[k] + b[k];
    return c;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "tensor: sub");
    Tensor c(a.rows(), a.cols());
    for (index_t k = 0; k < a.size(); ++k) c[k] = a[k] - b[k];
    return c;
}

inline Tensor operator*(double s, const Tensor& a) {
    Tensor c(a.rows(), a.cols());
    for (index_t k = 0; k < a.size(); ++k) c[k] = s * a[k];
    return c;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "tensor: hadamard");
    Tensor c(a.rows(), a.cols());
    for (index_t k = 0; k < a.size(); ++k) c[k] = a[k] * b[k];
    return c;
}

// ---- products (exact reductions) ----

/// C = A * B
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw dimension_error("tensor: matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                              std::to_string(b.rows()));
    Tensor c(a.rows(), b.cols());
    const index_t n = b.cols(), k = a.cols();
    for (index_t i = 0; i < a.rows(); ++i)
        for (index_t j = 0; j < n; ++j) c(i, j) = exact_dot(a.row(i), 1, b.data() + j, std::size_t(n), std::size_t(k));
    return c;
}

/// C = A * B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw dimension_error("tensor: matmul_nt: inner dimensions " + std::to_string(a.cols()) + " vs " +
                              std::to_string(b.cols()));
    Tensor c(a.rows(), b.rows());
    for (index_t i = 0; i < a.rows(); ++i)
        for (index_t j = 0; j < b.rows(); ++j) c(i, j) = exact_dot(a.row(i), b.row(j), std::size_t(a.cols()));
    return c;
}

/// C = A^T * B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw dimension_error("tensor: matmul_tn: inner dimensions " + std::to_string(a.rows()) + " vs " +
                              std::to_string(b.rows()));
    Tensor c(a.cols(), b.cols());
    const index_t m = a.rows();
    for (index_t i = 0; i < a.cols(); ++i)
        for (index_t j = 0; j < b.cols(); ++j)
            c(i, j) = exact_dot(a.data() + i, std::size_t(a.cols()), b.data() + j, std::size_t(b.cols()),
                                std::size_t(m));
    return c;
}

/// Exact dot of two equally shaped tensors viewed as vectors.
inline double dot_all(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "tensor: dot_all");
    return exact_dot(a.data(), b.data(), std::size_t(a.size()));
}

inline double rmse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "tensor: rmse");
    ExactAcc acc;
    for (index_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        acc.add(d * d);
    }
    return std::sqrt(acc.value() / double(a.size()));
}

}  // namespace gmc
