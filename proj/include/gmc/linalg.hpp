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

#include <Eigen/Dense>

#include <cmath>
#include <utility>

#include "gmc/errors.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

namespace detail {

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (index_t i = 0; i < t.rows(); ++i)
        for (index_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
    return m;
}

inline Tensor from_eigen(const Eigen::MatrixXd& m) {
    Tensor t(m.rows(), m.cols());
    for (index_t i = 0; i < t.rows(); ++i)
        for (index_t j = 0; j < t.cols(); ++j) t(i, j) = m(i, j);
    return t;
}

}  // namespace detail

/// Singular-value soft-thresholding: U max(S - tau, 0) V^T.
inline Tensor svd_soft_threshold(const Tensor& x, double tau) {
    if (tau < 0.0) throw parameter_error("linalg: svd_soft_threshold: negative threshold");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(detail::to_eigen(x),
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success)
        throw numerical_error("linalg: svd_soft_threshold: SVD failed");
    Eigen::VectorXd s = svd.singularValues();
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = std::max(s(i) - tau, 0.0);
    return detail::from_eigen(svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose());
}

/// Singular values after soft-thresholding, for nuclear-norm bookkeeping.
inline std::vector<double> singular_values(const Tensor& x) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(detail::to_eigen(x));
    if (svd.info() != Eigen::Success) throw numerical_error("linalg: singular_values: SVD failed");
    const Eigen::VectorXd& s = svd.singularValues();
    return std::vector<double>(s.data(), s.data() + s.size());
}

/// Rank-r truncated SVD factors W = U_r sqrt(S_r), H = V_r sqrt(S_r), computed
/// from the column Gram matrix X^T X. Every Gram entry is an exact sum over
/// rows, so the factor H is bitwise invariant under row permutation of X and
/// W is bitwise equivariant; a direct SVD of X would not give that guarantee.
/// Columns beyond the numerical rank come back zero.
inline std::pair<Tensor, Tensor> truncated_svd_gram(const Tensor& x, index_t r) {
    if (r < 1 || r > std::min(x.rows(), x.cols()))
        throw parameter_error("linalg: truncated_svd_gram: rank out of range");
    const index_t n = x.cols();
    Tensor gram = matmul_tn(x, x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::to_eigen(gram));
    if (es.info() != Eigen::Success)
        throw numerical_error("linalg: truncated_svd_gram: eigensolve failed");

    const double top = std::max(es.eigenvalues()(n - 1), 0.0);
    Tensor w(x.rows(), r);
    Tensor h(n, r);
    for (index_t k = 0; k < r; ++k) {
        const index_t src = n - 1 - k;  // eigenvalues come back ascending
        const double ev = es.eigenvalues()(src);
        if (!(ev > top * 1e-24) || ev <= 0.0) continue;  // below numerical rank: leave zero
        const double sigma = std::sqrt(ev);
        Eigen::VectorXd v = es.eigenvectors().col(src);
        // Deterministic sign: largest-magnitude entry positive, lowest index on ties.
        index_t pivot = 0;
        for (index_t i = 1; i < n; ++i)
            if (std::abs(v(i)) > std::abs(v(pivot))) pivot = i;
        if (v(pivot) < 0.0) v = -v;
        const double rs = std::sqrt(sigma);  // sqrt(sigma) splits energy evenly
        for (index_t i = 0; i < n; ++i) h(i, k) = v(i) * rs;
        // W_r = X v / sigma * sqrt(sigma); exact dot keeps row equivariance.
        Tensor vt(n, 1);
        for (index_t i = 0; i < n; ++i) vt(i, 0) = v(i);
        Tensor xv = matmul(x, vt);
        const double scale = rs / sigma;
        for (index_t i = 0; i < x.rows(); ++i) w(i, k) = xv(i, 0) * scale;
    }
    return {std::move(w), std::move(h)};
}

}  // namespace gmc
