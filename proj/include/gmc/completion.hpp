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

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gmc/autodiff.hpp"
#include "gmc/errors.hpp"
#include "gmc/graph.hpp"
#include "gmc/linalg.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

/// Partially observed matrix. Mask entries are 0/1; unobserved value cells
/// are held at zero so the pair can be serialized and compared bitwise.
struct MaskedMatrix {
    Tensor values;
    Tensor mask;

    MaskedMatrix(Tensor v, Tensor m) : values(std::move(v)), mask(std::move(m)) {
        check_same_shape(values, mask, "completion: MaskedMatrix");
        for (index_t k = 0; k < mask.size(); ++k) {
            if (mask[k] != 0.0 && mask[k] != 1.0)
                throw validation_error("completion: MaskedMatrix: mask entries must be 0 or 1");
            if (mask[k] == 0.0) values[k] = 0.0;
        }
    }

    index_t observed_count() const {
        index_t c = 0;
        for (index_t k = 0; k < mask.size(); ++k) c += mask[k] != 0.0;
        return c;
    }
};

/// Low-rank factor pair X ~= W H^T.
struct Factorization {
    Tensor w;  // rows x r
    Tensor h;  // cols x r
    index_t r = 0;

    Tensor reconstruct() const { return matmul_nt(w, h); }
};

/// Penalty weights shared by the completion solvers and the trained model.
/// All weights must be non-negative.
struct PenaltyWeights {
    double gamma = 1.0;    // data-fit weight
    double alpha_r = 0.0;  // row-graph Dirichlet weight
    double alpha_c = 0.0;  // column-graph Dirichlet weight
    double gamma_a = 0.0;  // diffused-factor row Dirichlet
    double gamma_b = 0.0;  // diffused-factor Frobenius
    double gamma_c = 0.0;  // column-factor Frobenius
    double gamma_d = 0.0;  // feature reconstruction
    double gamma_e = 0.0;  // label cross-entropy

    void validate(const char* who) const {
        const double all[] = {gamma,   alpha_r, alpha_c, gamma_a,
                              gamma_b, gamma_c, gamma_d, gamma_e};
        for (double v : all)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw parameter_error(std::string(who) + ": penalty weights must be >= 0");
    }
};

/// Iterate trace from a proximal-gradient completion run.
struct ProxResult {
    Tensor x;
    std::vector<double> objective;      // full objective after each accepted step
    std::vector<double> data_residual;  // ||mask o (values - x)||_F per step
    index_t iters = 0;
    bool converged = false;
};

/// Iterate trace from a factorized gradient-descent completion run.
struct FactorizedResult {
    Factorization fac;
    std::vector<double> objective;  // objective[0] is the initial value
    index_t iters = 0;
    bool converged = false;
};

namespace detail {

inline double masked_residual_norm(const MaskedMatrix& y, const Tensor& x) {
    ExactAcc acc;
    for (index_t k = 0; k < x.size(); ++k) {
        if (y.mask[k] == 0.0) continue;
        const double d = y.values[k] - x[k];
        acc.add(d * d);
    }
    return std::sqrt(acc.value());
}

inline void check_lap(const Tensor* lap, index_t dim, const char* who, const char* side) {
    if (!lap) return;
    if (lap->rows() != lap->cols() || lap->rows() != dim)
        throw dimension_error(std::string(who) + ": " + side + " Laplacian shape mismatch");
    for (index_t i = 0; i < dim; ++i)
        for (index_t j = i + 1; j < dim; ++j)
            if (std::abs((*lap)(i, j) - (*lap)(j, i)) > 1e-9)
                throw validation_error(std::string(who) + ": " + side +
                                       " Laplacian must be symmetric");
}

}  // namespace detail

/// Nuclear-norm completion with optional row/column Dirichlet smoothing.
/// Proximal gradient: a step on the smooth part
///   gamma/2 ||mask o (values - X)||_F^2
///   + alpha_r/2 tr(X^T L_r X) + alpha_c/2 tr(X L_c X^T)
/// followed by singular-value soft-thresholding at tau * step. The step is
/// 1 / (gamma + alpha_r lam(L_r) + alpha_c lam(L_c)) with lam an upper
/// spectral bound, which keeps the smooth part non-expansive. `step_override`
/// replaces the automatic step when positive (used by invariant checks).
inline ProxResult graph_reg_complete(const MaskedMatrix& y, const Tensor* row_lap,
                                     const Tensor* col_lap, const PenaltyWeights& weights,
                                     double tau, index_t max_iters = 2000, double tol = 1e-6,
                                     double step_override = 0.0) {
    const char* who = "completion: graph_reg_complete";
    weights.validate(who);
    if (tau < 0.0) throw parameter_error(std::string(who) + ": negative threshold");
    if (max_iters < 1) throw parameter_error(std::string(who) + ": max_iters must be >= 1");
    if (y.observed_count() == 0) throw parameter_error(std::string(who) + ": empty mask");
    detail::check_lap(row_lap, y.values.rows(), who, "row");
    detail::check_lap(col_lap, y.values.cols(), who, "column");

    double lipschitz = weights.gamma;
    if (row_lap && weights.alpha_r > 0.0)
        lipschitz += weights.alpha_r * detail::trace_spectral_bound(*row_lap);
    if (col_lap && weights.alpha_c > 0.0)
        lipschitz += weights.alpha_c * detail::trace_spectral_bound(*col_lap);
    const double step = step_override > 0.0 ? step_override : 1.0 / std::max(lipschitz, 1e-12);
    const double thresh = tau * step;

    ProxResult out;
    out.x = Tensor(y.values.rows(), y.values.cols());  // start at zero
    for (index_t it = 0; it < max_iters; ++it) {
        // Gradient of the smooth part.
        Tensor grad(out.x.rows(), out.x.cols());
        for (index_t k = 0; k < grad.size(); ++k)
            grad[k] = weights.gamma * y.mask[k] * (out.x[k] - y.values[k]);
        if (row_lap && weights.alpha_r > 0.0)
            grad = grad + weights.alpha_r * matmul(*row_lap, out.x);
        if (col_lap && weights.alpha_c > 0.0)
            grad = grad + weights.alpha_c * matmul(out.x, *col_lap);

        Tensor z = out.x - step * grad;
        Tensor next = thresh > 0.0 ? svd_soft_threshold(z, thresh) : std::move(z);
        if (!next.all_finite())
            throw numerical_error(std::string(who) + ": non-finite iterate at iteration " +
                                  std::to_string(it));

        ExactAcc diff;
        for (index_t k = 0; k < next.size(); ++k) {
            const double d = next[k] - out.x[k];
            diff.add(d * d);
        }
        const double rel = std::sqrt(diff.value()) / std::max(1.0, out.x.frob());
        out.x = std::move(next);
        out.iters = it + 1;

        const double res = detail::masked_residual_norm(y, out.x);
        double obj = 0.5 * weights.gamma * res * res;
        if (tau > 0.0) {
            double nuc = 0.0;
            for (double s : singular_values(out.x)) nuc += s;
            obj += tau * nuc;
        }
        if (row_lap && weights.alpha_r > 0.0)
            obj += 0.5 * weights.alpha_r * dot_all(out.x, matmul(*row_lap, out.x));
        if (col_lap && weights.alpha_c > 0.0)
            obj += 0.5 * weights.alpha_c * dot_all(out.x, matmul(out.x, *col_lap));
        out.objective.push_back(obj);
        out.data_residual.push_back(res);

        if (rel < tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

/// Nuclear-norm completion without graph terms.
inline ProxResult svt_complete(const MaskedMatrix& y, double gamma, double tau,
                               index_t max_iters = 2000, double tol = 1e-6,
                               double step_override = 0.0) {
    if (y.observed_count() == 0)
        throw parameter_error("completion: svt_complete: empty mask");
    PenaltyWeights w;
    w.gamma = gamma;
    return graph_reg_complete(y, nullptr, nullptr, w, tau, max_iters, tol, step_override);
}

namespace detail {

/// Gradient descent with halving backtracking (max 20 halvings per step) on a
/// tape-built objective of (W, H). Stops when the relative objective change
/// drops below tol or no halving yields a decrease.
template <class BuildLoss>
FactorizedResult descend(Tensor w0, Tensor h0, BuildLoss&& build, index_t max_iters, double tol,
                         const char* who) {
    const index_t r = w0.cols();
    auto eval = [&](const Tensor& w, const Tensor& h, Tensor* gw, Tensor* gh) {
        ad::Tape tape;
        ad::Val vw = tape.var(w);
        ad::Val vh = tape.var(h);
        ad::Val loss = build(tape, vw, vh);
        if (gw) {
            tape.backward(loss);
            *gw = tape.grad(vw);
            *gh = tape.grad(vh);
        }
        return tape.value(loss)(0, 0);
    };

    FactorizedResult out;
    double f;
    try {
        f = eval(w0, h0, nullptr, nullptr);
    } catch (const numerical_error&) {
        throw numerical_error(std::string(who) + ": non-finite objective at iteration 0");
    }
    out.objective.push_back(f);

    double step = 1.0;
    for (index_t it = 0; it < max_iters; ++it) {
        Tensor gw, gh;
        try {
            eval(w0, h0, &gw, &gh);
        } catch (const numerical_error&) {
            throw numerical_error(std::string(who) + ": diverged at iteration " +
                                  std::to_string(it));
        }

        bool accepted = false;
        double f_new = f;
        Tensor w_new, h_new;
        for (int halving = 0; halving <= 20; ++halving) {
            w_new = w0 - step * gw;
            h_new = h0 - step * gh;
            bool finite = true;
            try {
                f_new = eval(w_new, h_new, nullptr, nullptr);
            } catch (const numerical_error&) {
                finite = false;
            }
            if (finite && f_new <= f) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {  // no descent direction at the smallest step: stationary
            out.converged = true;
            break;
        }
        w0 = std::move(w_new);
        h0 = std::move(h_new);
        const double prev = f;
        f = f_new;
        out.objective.push_back(f);
        out.iters = it + 1;
        step = std::min(step * 2.0, 1.0);
        if (std::abs(prev - f) <= tol * std::max(1.0, std::abs(prev))) {
            out.converged = true;
            break;
        }
    }
    out.fac = Factorization{std::move(w0), std::move(h0), r};
    return out;
}

inline std::pair<Tensor, Tensor> factor_init(const MaskedMatrix& y, index_t r, const char* who) {
    if (r < 1 || r > std::min(y.values.rows(), y.values.cols()))
        throw parameter_error(std::string(who) + ": rank out of range");
    if (y.observed_count() == 0) throw parameter_error(std::string(who) + ": empty mask");
    return truncated_svd_gram(y.values, r);
}

}  // namespace detail

/// Factorized completion: gradient descent on
///   1/2 ||W||_F^2 + 1/2 ||H||_F^2 + gamma/2 ||mask o (W H^T - values)||_F^2
/// from a truncated-SVD initialization of the zero-filled matrix. The seed is
/// part of the call signature for reproducibility bookkeeping; the solver
/// itself is deterministic.
inline FactorizedResult factorized_complete(const MaskedMatrix& y, index_t r,
                                            const PenaltyWeights& weights,
                                            index_t max_iters = 2000, double tol = 1e-6,
                                            std::uint64_t seed = 0) {
    (void)seed;
    const char* who = "completion: factorized_complete";
    weights.validate(who);
    auto [w0, h0] = detail::factor_init(y, r, who);
    const Tensor target = y.values;
    const Tensor mask = y.mask;
    const double gamma = weights.gamma;
    return detail::descend(
        std::move(w0), std::move(h0),
        [&](ad::Tape& t, ad::Val vw, ad::Val vh) {
            ad::Val fit = t.hadamard(t.sub(t.matmul_nt(vw, vh), t.constant(target)),
                                     t.constant(mask));
            ad::Val obj = t.add(t.scale(t.frobenius_sq(vw), 0.5),
                                t.scale(t.frobenius_sq(vh), 0.5));
            return t.add(obj, t.scale(t.frobenius_sq(fit), 0.5 * gamma));
        },
        max_iters, tol, who);
}

/// Factorized completion with Dirichlet factor penalties:
///   1/2 tr(W^T L_r W) + [1/2 tr(H^T L_c H) or 1/2 ||H||_F^2 if no column
///   graph] + gamma/2 ||mask o (W H^T - values)||_F^2.
/// The row Laplacian is required; pass a zero matrix to drop that term.
inline FactorizedResult factorized_graph_complete(const MaskedMatrix& y, index_t r,
                                                  const Tensor& row_lap, const Tensor* col_lap,
                                                  const PenaltyWeights& weights,
                                                  index_t max_iters = 2000, double tol = 1e-6,
                                                  std::uint64_t seed = 0) {
    (void)seed;
    const char* who = "completion: factorized_graph_complete";
    weights.validate(who);
    detail::check_lap(&row_lap, y.values.rows(), who, "row");
    detail::check_lap(col_lap, y.values.cols(), who, "column");
    auto [w0, h0] = detail::factor_init(y, r, who);
    const Tensor target = y.values;
    const Tensor mask = y.mask;
    const double gamma = weights.gamma;
    return detail::descend(
        std::move(w0), std::move(h0),
        [&](ad::Tape& t, ad::Val vw, ad::Val vh) {
            ad::Val fit = t.hadamard(t.sub(t.matmul_nt(vw, vh), t.constant(target)),
                                     t.constant(mask));
            ad::Val wterm = t.scale(t.dirichlet(row_lap, vw), 0.5);
            ad::Val hterm = col_lap ? t.scale(t.dirichlet(*col_lap, vh), 0.5)
                                    : t.scale(t.frobenius_sq(vh), 0.5);
            return t.add(t.add(wterm, hterm), t.scale(t.frobenius_sq(fit), 0.5 * gamma));
        },
        max_iters, tol, who);
}

}  // namespace gmc
