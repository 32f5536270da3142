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
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gmc/autodiff.hpp"
#include "gmc/completion.hpp"
#include "gmc/data.hpp"
#include "gmc/errors.hpp"
#include "gmc/graph.hpp"
#include "gmc/linalg.hpp"
#include "gmc/rng.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

/// Learnable state of the recurrent graph-convolution completer: Chebyshev
/// filter banks, one shared recurrent cell applied row-wise, a projection
/// from hidden state to row-factor increments, and the factor pair itself
/// (both trainable). Filter output width q equals the hidden size; the cell
/// has no separate width knob.
struct ModelParams {
    index_t m = 0;  // matrix rows
    index_t d = 0;  // matrix columns (features + label columns)
    index_t r = 0;  // factor rank
    index_t p = 0;  // Chebyshev order (p + 1 filter banks)
    index_t q = 0;  // filter output width
    index_t h = 0;  // recurrent hidden size

    std::vector<Tensor> cheb;    // p + 1 banks, each r x q
    Tensor wxi, wxf, wxg, wxo;   // q x h input-to-gate weights
    Tensor whi, whf, whg, who;   // h x h hidden-to-gate weights
    Tensor bi, bf, bg, bo;       // 1 x h gate biases
    Tensor out_w;                // h x r hidden-to-increment projection
    Tensor out_b;                // 1 x r increment bias
    Tensor w0;                   // m x r initial row factor
    Tensor hcol;                 // d x r column factor

    index_t param_count() const;
    void validate(const char* ctx) const;
};

/// Canonical block order. Everything that walks parameters (optimizer,
/// checkpoints, gradient checks) goes through this one visitor, so the
/// order can never drift between them. Works for any struct with these
/// field names; the model and its tape image share them.
template <class Model, class Fn>
void visit_blocks(Model& mp, Fn&& fn) {
    for (std::size_t k = 0; k < mp.cheb.size(); ++k) fn("cheb_" + std::to_string(k), mp.cheb[k]);
    fn("wxi", mp.wxi);
    fn("wxf", mp.wxf);
    fn("wxg", mp.wxg);
    fn("wxo", mp.wxo);
    fn("whi", mp.whi);
    fn("whf", mp.whf);
    fn("whg", mp.whg);
    fn("who", mp.who);
    fn("bi", mp.bi);
    fn("bf", mp.bf);
    fn("bg", mp.bg);
    fn("bo", mp.bo);
    fn("out_w", mp.out_w);
    fn("out_b", mp.out_b);
    fn("w0", mp.w0);
    fn("hcol", mp.hcol);
}

inline index_t ModelParams::param_count() const {
    index_t total = 0;
    visit_blocks(*this, [&](const std::string&, const Tensor& t) { total += t.size(); });
    return total;
}

inline void ModelParams::validate(const char* ctx) const {
    const std::string w = std::string("srgcnn: ") + ctx;
    if (m <= 0 || d <= 0 || r <= 0 || p <= 0 || q <= 0 || h <= 0)
        throw validation_error(w + ": dimensions must be positive");
    if (index_t(cheb.size()) != p + 1) throw validation_error(w + ": expected " + std::to_string(p + 1) + " filter banks");
    bool ok = true;
    visit_blocks(*this, [&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
    if (!ok) throw validation_error(w + ": non-finite parameter");
    auto want = [&](const Tensor& t, index_t rr, index_t cc, const char* name) {
        if (t.rows() != rr || t.cols() != cc)
            throw validation_error(w + ": block " + name + " has shape " + std::to_string(t.rows()) + "x" +
                                   std::to_string(t.cols()) + ", expected " + std::to_string(rr) + "x" +
                                   std::to_string(cc));
    };
    for (const Tensor& t : cheb) want(t, r, q, "cheb");
    want(wxi, q, h, "wxi");
    want(wxf, q, h, "wxf");
    want(wxg, q, h, "wxg");
    want(wxo, q, h, "wxo");
    want(whi, h, h, "whi");
    want(whf, h, h, "whf");
    want(whg, h, h, "whg");
    want(who, h, h, "who");
    want(bi, 1, h, "bi");
    want(bf, 1, h, "bf");
    want(bg, 1, h, "bg");
    want(bo, 1, h, "bo");
    want(out_w, h, r, "out_w");
    want(out_b, 1, r, "out_b");
    want(w0, m, r, "w0");
    want(hcol, d, r, "hcol");
}

/// Loss weights the library ships with. Callers fitting anything non-trivial
/// are expected to supply their own.
inline PenaltyWeights default_loss_weights() {
    PenaltyWeights w;
    w.gamma_a = 563.39;
    w.gamma_b = 248.91;
    w.gamma_c = 688.85;
    w.gamma_d = 97.63;
    w.gamma_e = 890.14;
    return w;
}

struct TrainConfig {
    index_t rank = 156;
    index_t cheb_order = 18;
    index_t hidden_units = 36;
    double learning_rate = 0.00089;
    index_t diffusion_steps = 10;
    index_t epochs = 500;
    PenaltyWeights weights = default_loss_weights();
    double early_stop_tol = 1e-6;
    index_t early_stop_patience = 50;
    std::uint64_t seed = 0;

    void validate() const {
        if (rank <= 0) throw parameter_error("srgcnn: config: rank must be positive");
        if (cheb_order <= 0) throw parameter_error("srgcnn: config: Chebyshev order must be positive");
        if (hidden_units <= 0) throw parameter_error("srgcnn: config: hidden size must be positive");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw parameter_error("srgcnn: config: learning rate must be positive");
        if (diffusion_steps <= 0) throw parameter_error("srgcnn: config: need at least one diffusion step");
        if (epochs <= 0) throw parameter_error("srgcnn: config: epochs must be positive");
        if (!(early_stop_tol >= 0.0) || !std::isfinite(early_stop_tol))
            throw parameter_error("srgcnn: config: early-stop tolerance must be non-negative");
        if (early_stop_patience <= 0) throw parameter_error("srgcnn: config: early-stop patience must be positive");
        weights.validate("srgcnn: config");
    }
};

/// Tape image of the parameter set: same field names, Vals instead of
/// Tensors, so visit_blocks walks both in the same order.
struct ParamVals {
    std::vector<ad::Val> cheb;
    ad::Val wxi, wxf, wxg, wxo;
    ad::Val whi, whf, whg, who;
    ad::Val bi, bf, bg, bo;
    ad::Val out_w, out_b;
    ad::Val w0, hcol;
};

/// Rebuilds the tape image from leaves listed in visit_blocks order. Used
/// where the leaves come from an external walker (gradient checks).
inline ParamVals assemble_param_vals(const std::vector<ad::Val>& vals, index_t cheb_order) {
    if (index_t(vals.size()) != cheb_order + 17)
        throw parameter_error("srgcnn: assemble_param_vals: expected " + std::to_string(cheb_order + 17) +
                              " blocks, got " + std::to_string(vals.size()));
    ParamVals pv;
    std::size_t k = 0;
    pv.cheb.reserve(std::size_t(cheb_order) + 1);
    for (index_t i = 0; i <= cheb_order; ++i) pv.cheb.push_back(vals[k++]);
    pv.wxi = vals[k++];
    pv.wxf = vals[k++];
    pv.wxg = vals[k++];
    pv.wxo = vals[k++];
    pv.whi = vals[k++];
    pv.whf = vals[k++];
    pv.whg = vals[k++];
    pv.who = vals[k++];
    pv.bi = vals[k++];
    pv.bf = vals[k++];
    pv.bg = vals[k++];
    pv.bo = vals[k++];
    pv.out_w = vals[k++];
    pv.out_b = vals[k++];
    pv.w0 = vals[k++];
    pv.hcol = vals[k++];
    return pv;
}

/// Registers every block as a differentiable leaf.
inline ParamVals lift(ad::Tape& tape, const ModelParams& params) {
    ParamVals pv;
    pv.cheb.reserve(params.cheb.size());
    for (const Tensor& c : params.cheb) pv.cheb.push_back(tape.var(c));
    pv.wxi = tape.var(params.wxi);
    pv.wxf = tape.var(params.wxf);
    pv.wxg = tape.var(params.wxg);
    pv.wxo = tape.var(params.wxo);
    pv.whi = tape.var(params.whi);
    pv.whf = tape.var(params.whf);
    pv.whg = tape.var(params.whg);
    pv.who = tape.var(params.who);
    pv.bi = tape.var(params.bi);
    pv.bf = tape.var(params.bf);
    pv.bg = tape.var(params.bg);
    pv.bo = tape.var(params.bo);
    pv.out_w = tape.var(params.out_w);
    pv.out_b = tape.var(params.out_b);
    pv.w0 = tape.var(params.w0);
    pv.hcol = tape.var(params.hcol);
    return pv;
}

/// Chebyshev graph filter bank followed by tanh: sum_k T_k(S) X Theta_k. The
/// operator S comes from the LaplacianSet's scaled form.
inline ad::Val gcn_features(ad::Tape& tape, ad::Val x, const LaplacianSet& lap,
                            const std::vector<ad::Val>& coeffs) {
    if (coeffs.empty()) throw parameter_error("srgcnn: gcn_features: no filter banks");
    const Tensor& xv = tape.value(x);
    const Tensor& c0 = tape.value(coeffs[0]);
    if (c0.rows() != xv.cols())
        throw dimension_error("srgcnn: gcn_features: filter bank rows " + std::to_string(c0.rows()) +
                              " do not match input columns " + std::to_string(xv.cols()));
    for (const ad::Val& c : coeffs) {
        const Tensor& cv = tape.value(c);
        if (cv.rows() != c0.rows() || cv.cols() != c0.cols())
            throw dimension_error("srgcnn: gcn_features: filter banks disagree in shape");
    }
    std::vector<ad::Val> stack = chebyshev_stack(tape, lap, x, index_t(coeffs.size()) - 1);
    ad::Val acc = tape.matmul(stack[0], coeffs[0]);
    for (std::size_t k = 1; k < coeffs.size(); ++k) acc = tape.add(acc, tape.matmul(stack[k], coeffs[k]));
    return tape.tanh(acc);
}

/// Learned diffusion: T rounds of filter -> shared recurrent cell (input,
/// forget, candidate, output gates) -> additive increment on the row factor.
/// Hidden and cell state start at zero and carry across rounds. Returns the
/// final row factor.
inline ad::Val diffuse(ad::Tape& tape, const ParamVals& pv, const LaplacianSet& lap, index_t steps) {
    if (steps < 1) throw parameter_error("srgcnn: diffuse: need at least one step");
    const Tensor& w0v = tape.value(pv.w0);
    const index_t m = w0v.rows();
    const index_t hidden = tape.value(pv.bi).cols();
    ad::Val w = pv.w0;
    ad::Val hs = tape.constant(Tensor(m, hidden));
    ad::Val cs = tape.constant(Tensor(m, hidden));
    for (index_t t = 0; t < steps; ++t) {
        try {
            ad::Val x = gcn_features(tape, w, lap, pv.cheb);
            ad::Val ig =
                tape.sigmoid(tape.add_rowvec(tape.add(tape.matmul(x, pv.wxi), tape.matmul(hs, pv.whi)), pv.bi));
            ad::Val fg =
                tape.sigmoid(tape.add_rowvec(tape.add(tape.matmul(x, pv.wxf), tape.matmul(hs, pv.whf)), pv.bf));
            ad::Val gg =
                tape.tanh(tape.add_rowvec(tape.add(tape.matmul(x, pv.wxg), tape.matmul(hs, pv.whg)), pv.bg));
            ad::Val og =
                tape.sigmoid(tape.add_rowvec(tape.add(tape.matmul(x, pv.wxo), tape.matmul(hs, pv.who)), pv.bo));
            cs = tape.add(tape.hadamard(fg, cs), tape.hadamard(ig, gg));
            hs = tape.hadamard(og, tape.tanh(cs));
            w = tape.add(w, tape.add_rowvec(tape.matmul(hs, pv.out_w), pv.out_b));
        } catch (const numerical_error& e) {
            throw numerical_error("srgcnn: diffuse: non-finite state at step " + std::to_string(t) + ": " +
                                  e.what());
        }
        if (!tape.value(w).all_finite())
            throw numerical_error("srgcnn: diffuse: non-finite state at step " + std::to_string(t));
    }
    return w;
}

namespace detail {

/// Feature and label masks widened to the full column span of Z.
inline std::pair<Tensor, Tensor> full_width_masks(const MaskedDataset& z) {
    const index_t m = z.rows(), n = z.features(), c = z.label_cols();
    Tensor mask_a(m, n + c), mask_b(m, n + c);
    for (index_t i = 0; i < m; ++i) {
        for (index_t j = 0; j < n; ++j) mask_a(i, j) = z.omega_a(i, j);
        for (index_t j = 0; j < c; ++j) mask_b(i, n + j) = z.omega_b(i, j);
    }
    return {std::move(mask_a), std::move(mask_b)};
}

}  // namespace detail

/// Joint completion/classification objective on the heterogeneous matrix
/// Z = [features | labels]: graph smoothness of the row factor (normalized
/// operator), Frobenius penalties on both factors, masked squared
/// reconstruction error on observed features, and masked cross-entropy on
/// observed labels read as logits from the label columns. Terms with zero
/// weight are skipped, so an all-zero weight set yields the zero constant.
inline ad::Val loss_eq6(ad::Tape& tape, ad::Val w_final, ad::Val hcol, const MaskedDataset& z,
                        const LaplacianSet& lap, const PenaltyWeights& weights) {
    weights.validate("srgcnn: loss");
    const Tensor& wv = tape.value(w_final);
    const Tensor& hv = tape.value(hcol);
    const index_t m = z.rows(), n = z.features(), c = z.label_cols();
    if (wv.rows() != m)
        throw dimension_error("srgcnn: loss: row factor has " + std::to_string(wv.rows()) + " rows, dataset has " +
                              std::to_string(m));
    if (hv.rows() != n + c)
        throw dimension_error("srgcnn: loss: column factor has " + std::to_string(hv.rows()) +
                              " rows, dataset has " + std::to_string(n + c) + " columns");
    if (wv.cols() != hv.cols()) throw dimension_error("srgcnn: loss: factor ranks disagree");

    std::vector<ad::Val> terms;
    if (weights.gamma_a > 0.0) {
        if (!lap.norm_csr) throw parameter_error("srgcnn: loss: missing normalized operator");
        terms.push_back(tape.scale(tape.dirichlet(lap.norm_csr, w_final), 0.5 * weights.gamma_a));
    }
    if (weights.gamma_b > 0.0) terms.push_back(tape.scale(tape.frobenius_sq(w_final), 0.5 * weights.gamma_b));
    if (weights.gamma_c > 0.0) terms.push_back(tape.scale(tape.frobenius_sq(hcol), 0.5 * weights.gamma_c));
    if (weights.gamma_d > 0.0 || weights.gamma_e > 0.0) {
        auto [mask_a, mask_b] = detail::full_width_masks(z);
        ad::Val x = tape.matmul_nt(w_final, hcol);
        if (weights.gamma_d > 0.0) {
            ad::Val resid = tape.hadamard(tape.sub(tape.constant(z.z), x), tape.constant(std::move(mask_a)));
            terms.push_back(tape.scale(tape.frobenius_sq(resid), 0.5 * weights.gamma_d));
        }
        if (weights.gamma_e > 0.0) {
            if (mask_b.frob_sq() == 0.0) throw validation_error("srgcnn: loss: no observed label entries");
            terms.push_back(tape.scale(tape.masked_bce(x, z.z, mask_b), weights.gamma_e));
        }
    }
    if (terms.empty()) return tape.constant(Tensor(1, 1));
    ad::Val loss = terms[0];
    for (std::size_t k = 1; k < terms.size(); ++k) loss = tape.add(loss, terms[k]);
    return loss;
}

/// Fresh parameter set for a dataset: factors from the truncated SVD of the
/// zero-filled matrix, gate weights fan-in scaled, forget bias one, and a
/// zero increment projection so the diffusion starts as the identity on W0.
inline ModelParams init_params(const MaskedDataset& z, const TrainConfig& cfg) {
    cfg.validate();
    const index_t m = z.rows(), d = z.features() + z.label_cols();
    if (cfg.rank > std::min(m, d))
        throw parameter_error("srgcnn: init: rank " + std::to_string(cfg.rank) + " exceeds min dimension " +
                              std::to_string(std::min(m, d)));
    ModelParams params;
    params.m = m;
    params.d = d;
    params.r = cfg.rank;
    params.p = cfg.cheb_order;
    params.q = cfg.hidden_units;
    params.h = cfg.hidden_units;

    auto [w, hc] = truncated_svd_gram(z.z, cfg.rank);
    params.w0 = std::move(w);
    params.hcol = std::move(hc);

    Rng rng(cfg.seed);
    const double cheb_scale = 1.0 / std::sqrt(double(params.r) * double(params.p + 1));
    params.cheb.reserve(std::size_t(params.p) + 1);
    for (index_t k = 0; k <= params.p; ++k)
        params.cheb.push_back(cheb_scale * Tensor::randn(params.r, params.q, rng));
    const double gate_scale = 1.0 / std::sqrt(double(params.q + params.h));
    params.wxi = gate_scale * Tensor::randn(params.q, params.h, rng);
    params.wxf = gate_scale * Tensor::randn(params.q, params.h, rng);
    params.wxg = gate_scale * Tensor::randn(params.q, params.h, rng);
    params.wxo = gate_scale * Tensor::randn(params.q, params.h, rng);
    params.whi = gate_scale * Tensor::randn(params.h, params.h, rng);
    params.whf = gate_scale * Tensor::randn(params.h, params.h, rng);
    params.whg = gate_scale * Tensor::randn(params.h, params.h, rng);
    params.who = gate_scale * Tensor::randn(params.h, params.h, rng);
    params.bi = Tensor(1, params.h);
    params.bf = Tensor(1, params.h, 1.0);
    params.bg = Tensor(1, params.h);
    params.bo = Tensor(1, params.h);
    params.out_w = Tensor(params.h, params.r);
    params.out_b = Tensor(1, params.r);
    params.validate("init");
    return params;
}

struct TrainTrace {
    std::vector<double> losses;  // one entry per epoch, evaluated before that epoch's update
    bool early_stopped = false;
    bool aborted = false;
    std::string abort_message;
};

struct TrainResult {
    ModelParams params;
    TrainTrace trace;
};

/// Full-batch adaptive-moment training of the whole parameter set. A
/// non-finite loss or diffusion state aborts and returns the trace up to the
/// failure instead of throwing, so partial runs stay inspectable.
inline TrainResult train(const MaskedDataset& z, const LaplacianSet& lap, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.weights.gamma_e > 0.0 && z.omega_b.frob_sq() == 0.0)
        throw parameter_error("srgcnn: train: no observed label entries");
    TrainResult out;
    out.params = init_params(z, cfg);

    std::vector<Tensor*> blocks;
    visit_blocks(out.params, [&](const std::string&, Tensor& t) { blocks.push_back(&t); });
    std::vector<Tensor> mom, vel;
    mom.reserve(blocks.size());
    vel.reserve(blocks.size());
    for (Tensor* b : blocks) {
        mom.emplace_back(b->rows(), b->cols());
        vel.emplace_back(b->rows(), b->cols());
    }

    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double best = std::numeric_limits<double>::infinity();
    index_t stale = 0;
    for (index_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        ad::Tape tape;
        ParamVals pv = lift(tape, out.params);
        std::vector<ad::Val> vals;
        visit_blocks(pv, [&](const std::string&, ad::Val& v) { vals.push_back(v); });

        ad::Val loss;
        try {
            ad::Val w_final = diffuse(tape, pv, lap, cfg.diffusion_steps);
            loss = loss_eq6(tape, w_final, pv.hcol, z, lap, cfg.weights);
        } catch (const numerical_error& e) {
            out.trace.aborted = true;
            out.trace.abort_message = e.what();
            break;
        }
        const double f = tape.value(loss)(0, 0);
        if (!std::isfinite(f)) {
            out.trace.aborted = true;
            out.trace.abort_message = "srgcnn: train: non-finite loss at epoch " + std::to_string(epoch);
            break;
        }
        out.trace.losses.push_back(f);
        if (f < best - cfg.early_stop_tol) {
            best = f;
            stale = 0;
        } else if (++stale >= cfg.early_stop_patience) {
            out.trace.early_stopped = true;
            break;
        }

        tape.backward(loss);
        const double c1 = 1.0 - std::pow(beta1, double(epoch + 1));
        const double c2 = 1.0 - std::pow(beta2, double(epoch + 1));
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const Tensor& g = tape.grad(vals[b]);
            Tensor& theta = *blocks[b];
            for (index_t k = 0; k < theta.size(); ++k) {
                mom[b][k] = beta1 * mom[b][k] + (1.0 - beta1) * g[k];
                vel[b][k] = beta2 * vel[b][k] + (1.0 - beta2) * g[k] * g[k];
                theta[k] -= cfg.learning_rate * (mom[b][k] / c1) / (std::sqrt(vel[b][k] / c2) + eps);
            }
        }
    }
    return out;
}

struct Prediction {
    Tensor imputed;                   // m x n, observed entries passed through
    std::vector<double> label_probs;  // per row, first label column
};

/// Runs the trained diffusion forward and reads the reconstruction: feature
/// columns with observed entries overwritten by their known values, label
/// column squashed to probabilities.
inline Prediction predict(const ModelParams& params, const LaplacianSet& lap, const MaskedDataset& z,
                          index_t diffusion_steps) {
    params.validate("predict");
    const index_t m = z.rows(), n = z.features(), c = z.label_cols();
    if (params.m != m || params.d != n + c)
        throw dimension_error("srgcnn: predict: parameter shape does not match dataset");
    ad::Tape tape;
    ParamVals pv = lift(tape, params);
    ad::Val w_final = diffuse(tape, pv, lap, diffusion_steps);
    Tensor x = matmul_nt(tape.value(w_final), params.hcol);

    Prediction out;
    out.imputed = Tensor(m, n);
    for (index_t i = 0; i < m; ++i)
        for (index_t j = 0; j < n; ++j)
            out.imputed(i, j) = z.omega_a(i, j) == 1.0 ? z.z(i, j) : x(i, j);
    out.label_probs.resize(static_cast<std::size_t>(m));
    for (index_t i = 0; i < m; ++i) {
        const double v = x(i, n);
        out.label_probs[std::size_t(i)] =
            v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return out;
}

/// Checkpoints are JSON: the config, the dimensions, and every block as a
/// flat array. Doubles survive the round trip bitwise (shortest-round-trip
/// printing on write, exact parse on read).
inline void save_checkpoint(const std::string& path, const ModelParams& params, const TrainConfig& cfg) {
    params.validate("save_checkpoint");
    nlohmann::json j;
    j["config"] = {{"rank", cfg.rank},
                   {"cheb_order", cfg.cheb_order},
                   {"hidden_units", cfg.hidden_units},
                   {"learning_rate", cfg.learning_rate},
                   {"diffusion_steps", cfg.diffusion_steps},
                   {"epochs", cfg.epochs},
                   {"early_stop_tol", cfg.early_stop_tol},
                   {"early_stop_patience", cfg.early_stop_patience},
                   {"seed", cfg.seed},
                   {"weights",
                    {{"gamma", cfg.weights.gamma},
                     {"alpha_r", cfg.weights.alpha_r},
                     {"alpha_c", cfg.weights.alpha_c},
                     {"gamma_a", cfg.weights.gamma_a},
                     {"gamma_b", cfg.weights.gamma_b},
                     {"gamma_c", cfg.weights.gamma_c},
                     {"gamma_d", cfg.weights.gamma_d},
                     {"gamma_e", cfg.weights.gamma_e}}}};
    j["dims"] = {{"m", params.m}, {"d", params.d}, {"r", params.r},
                 {"p", params.p}, {"q", params.q}, {"h", params.h}};
    nlohmann::json blocks = nlohmann::json::object();
    visit_blocks(params, [&](const std::string& name, const Tensor& t) {
        nlohmann::json data = nlohmann::json::array();
        for (index_t k = 0; k < t.size(); ++k) data.push_back(t[k]);
        blocks[name] = {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}};
    });
    j["blocks"] = std::move(blocks);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("srgcnn: save_checkpoint: cannot open '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw io_error("srgcnn: save_checkpoint: write failed for '" + path + "'");
}

inline std::pair<ModelParams, TrainConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("srgcnn: load_checkpoint: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("srgcnn: load_checkpoint: " + std::string(e.what()));
    }
    try {
        TrainConfig cfg;
        const nlohmann::json& c = j.at("config");
        cfg.rank = c.at("rank").get<index_t>();
        cfg.cheb_order = c.at("cheb_order").get<index_t>();
        cfg.hidden_units = c.at("hidden_units").get<index_t>();
        cfg.learning_rate = c.at("learning_rate").get<double>();
        cfg.diffusion_steps = c.at("diffusion_steps").get<index_t>();
        cfg.epochs = c.at("epochs").get<index_t>();
        cfg.early_stop_tol = c.at("early_stop_tol").get<double>();
        cfg.early_stop_patience = c.at("early_stop_patience").get<index_t>();
        cfg.seed = c.at("seed").get<std::uint64_t>();
        const nlohmann::json& w = c.at("weights");
        cfg.weights.gamma = w.at("gamma").get<double>();
        cfg.weights.alpha_r = w.at("alpha_r").get<double>();
        cfg.weights.alpha_c = w.at("alpha_c").get<double>();
        cfg.weights.gamma_a = w.at("gamma_a").get<double>();
        cfg.weights.gamma_b = w.at("gamma_b").get<double>();
        cfg.weights.gamma_c = w.at("gamma_c").get<double>();
        cfg.weights.gamma_d = w.at("gamma_d").get<double>();
        cfg.weights.gamma_e = w.at("gamma_e").get<double>();

        ModelParams params;
        const nlohmann::json& dims = j.at("dims");
        params.m = dims.at("m").get<index_t>();
        params.d = dims.at("d").get<index_t>();
        params.r = dims.at("r").get<index_t>();
        params.p = dims.at("p").get<index_t>();
        params.q = dims.at("q").get<index_t>();
        params.h = dims.at("h").get<index_t>();
        params.cheb.resize(static_cast<std::size_t>(params.p) + 1);
        const nlohmann::json& blocks = j.at("blocks");
        visit_blocks(params, [&](const std::string& name, Tensor& t) {
            const nlohmann::json& b = blocks.at(name);
            const index_t rows = b.at("rows").get<index_t>();
            const index_t cols = b.at("cols").get<index_t>();
            const nlohmann::json& data = b.at("data");
            if (index_t(data.size()) != rows * cols)
                throw parse_error("srgcnn: load_checkpoint: block " + name + " size mismatch");
            t = Tensor(rows, cols);
            for (index_t k = 0; k < t.size(); ++k) t[k] = data[std::size_t(k)].get<double>();
        });
        params.validate("load_checkpoint");
        return {std::move(params), std::move(cfg)};
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("srgcnn: load_checkpoint: malformed checkpoint: " + std::string(e.what()));
    }
}

}  // namespace gmc
