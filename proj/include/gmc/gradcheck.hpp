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
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gmc/autodiff.hpp"
#include "gmc/data.hpp"
#include "gmc/errors.hpp"
#include "gmc/graph.hpp"
#include "gmc/rng.hpp"
#include "gmc/sparse.hpp"
#include "gmc/srgcnn.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

/// One line per checked block: every primitive tape op, then every model
/// parameter block through the full diffusion loss.
struct GradCheckReport {
    double tolerance = 1e-4;
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool passed() const { return max_rel_err < tolerance; }
};

namespace detail {

using BuildFn = std::function<ad::Val(ad::Tape&, const std::vector<ad::Val>&)>;

inline double gc_loss_at(const std::vector<Tensor>& xs, const BuildFn& build) {
    ad::Tape tape;
    std::vector<ad::Val> vals;
    vals.reserve(xs.size());
    for (const Tensor& x : xs) vals.push_back(tape.var(x));
    return tape.value(build(tape, vals))(0, 0);
}

/// Central finite differences against the tape gradient, worst relative
/// error over every entry of every leaf. `corrupt` shifts one analytic
/// gradient entry of the first leaf, a hook for proving the check can fail.
inline double gc_max_rel(std::vector<Tensor> xs, const BuildFn& build, double eps = 1e-5,
                         double corrupt = 0.0) {
    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Val> vals;
        vals.reserve(xs.size());
        for (const Tensor& x : xs) vals.push_back(tape.var(x));
        ad::Val loss = build(tape, vals);
        tape.backward(loss);
        analytic.reserve(xs.size());
        for (ad::Val v : vals) analytic.push_back(tape.grad(v));
    }
    if (corrupt != 0.0 && !analytic.empty() && analytic[0].size() > 0) analytic[0][0] += corrupt;

    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (index_t k = 0; k < xs[i].size(); ++k) {
            const double keep = xs[i][k];
            xs[i][k] = keep + eps;
            const double up = gc_loss_at(xs, build);
            xs[i][k] = keep - eps;
            const double dn = gc_loss_at(xs, build);
            xs[i][k] = keep;
            const double fd = (up - dn) / (2.0 * eps);
            const double a = analytic[i][k];
            const double denom = std::max({std::abs(a), std::abs(fd), 1e-3});
            worst = std::max(worst, std::abs(a - fd) / denom);
        }
    }
    return worst;
}

}  // namespace detail

/// Finite-difference sweep over every primitive op on small seeded inputs,
/// then over every parameter block of a desk-scale model instance through
/// the full diffusion and joint loss. `corrupt_block`, when it names an
/// entry, shifts that block's analytic gradient so the caller can verify
/// the failure path end to end.
inline GradCheckReport run_gradcheck(std::uint64_t seed = 20260818,
                                     const std::string& corrupt_block = "") {
    GradCheckReport report;
    Rng rng(seed);
    auto add = [&](const std::string& name, std::vector<Tensor> xs, const detail::BuildFn& build) {
        const double corrupt = name == corrupt_block ? 1.0 : 0.0;
        report.entries.push_back({name, detail::gc_max_rel(std::move(xs), build, 1e-5, corrupt)});
    };

    Tensor a34 = Tensor::randn(3, 4, rng);
    Tensor b42 = Tensor::randn(4, 2, rng);
    add("op:matmul", {a34, b42}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.matmul(v[0], v[1]));
    });
    Tensor b54 = Tensor::randn(5, 4, rng);
    add("op:matmul_nt", {a34, b54}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.matmul_nt(v[0], v[1]));
    });
    Tensor a33 = Tensor::randn(3, 3, rng);
    Tensor b33 = Tensor::randn(3, 3, rng);
    add("op:add", {a33, b33}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.add(v[0], v[1]));
    });
    add("op:sub", {a33, b33}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.sub(v[0], v[1]));
    });
    add("op:hadamard", {a33, b33}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.hadamard(v[0], v[1]));
    });
    add("op:scale", {a33}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.scale(v[0], -0.7));
    });
    add("op:sigmoid", {a33}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.sigmoid(v[0]));
    });
    add("op:tanh", {a33}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.tanh(v[0]));
    });
    Tensor a43 = Tensor::randn(4, 3, rng);
    Tensor bias13 = Tensor::randn(1, 3, rng);
    add("op:add_rowvec", {a43, bias13}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.add_rowvec(v[0], v[1]));
    });
    add("op:frobenius_sq", {a34}, [](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(v[0]);
    });

    Tensor adj5(5, 5);
    for (index_t i = 0; i + 1 < 5; ++i) {
        adj5(i, i + 1) = 1.0;
        adj5(i + 1, i) = 1.0;
    }
    const LaplacianSet path5 = laplacians(PopulationGraph::from_adjacency(std::move(adj5)));
    Tensor x52 = Tensor::randn(5, 2, rng);
    add("op:dirichlet_dense", {x52}, [&path5](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.dirichlet(path5.lap, v[0]);
    });
    add("op:dirichlet_sparse", {x52}, [&path5](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.dirichlet(path5.norm_csr, v[0]);
    });
    add("op:spmm", {x52}, [&path5](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(t.spmm(path5.scaled_csr, v[0]));
    });
    Tensor logits = Tensor::randn(4, 3, rng);
    Tensor targets(4, 3), bmask(4, 3);
    for (index_t k = 0; k < targets.size(); ++k) {
        targets[k] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        bmask[k] = rng.bernoulli(0.6) ? 1.0 : 0.0;
    }
    bmask(0, 0) = 1.0;
    add("op:masked_bce", {logits}, [&targets, &bmask](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.masked_bce(v[0], targets, bmask);
    });

    // End to end: every parameter block of a small model, through the full
    // diffusion and the joint loss, at a generic random point.
    SynthInstance inst = synth_instance(12, 6, 2, 0.05, 0.75, 1.5, seed + 1);
    const LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 3.0));
    TrainConfig cfg;
    cfg.rank = 3;
    cfg.cheb_order = 2;
    cfg.hidden_units = 4;
    cfg.diffusion_steps = 2;
    cfg.weights.gamma_a = 0.8;
    cfg.weights.gamma_b = 0.35;
    cfg.weights.gamma_c = 0.45;
    cfg.weights.gamma_d = 1.2;
    cfg.weights.gamma_e = 0.9;
    cfg.seed = seed + 2;
    ModelParams params = init_params(inst.ds, cfg);
    visit_blocks(params, [&](const std::string&, Tensor& t) {
        for (index_t k = 0; k < t.size(); ++k) t[k] = 0.35 * rng.normal();
    });

    std::vector<std::string> block_names;
    std::vector<Tensor> block_values;
    visit_blocks(params, [&](const std::string& name, const Tensor& t) {
        block_names.push_back(name);
        block_values.push_back(t);
    });
    const index_t order = params.p;
    const detail::BuildFn model_loss = [&inst, &lap, &cfg, order](ad::Tape& t,
                                                                  const std::vector<ad::Val>& v) {
        ParamVals pv = assemble_param_vals(v, order);
        ad::Val w_final = diffuse(t, pv, lap, cfg.diffusion_steps);
        return loss_eq6(t, w_final, pv.hcol, inst.ds, lap, cfg.weights);
    };

    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Val> vals;
        vals.reserve(block_values.size());
        for (const Tensor& x : block_values) vals.push_back(tape.var(x));
        ad::Val loss = model_loss(tape, vals);
        tape.backward(loss);
        for (ad::Val v : vals) analytic.push_back(tape.grad(v));
    }
    for (std::size_t b = 0; b < block_names.size(); ++b) {
        const std::string entry_name = "model:" + block_names[b];
        Tensor grad = analytic[b];
        if (entry_name == corrupt_block && grad.size() > 0) grad[0] += 1.0;
        double worst = 0.0;
        const double eps = 1e-5;
        for (index_t k = 0; k < block_values[b].size(); ++k) {
            const double keep = block_values[b][k];
            block_values[b][k] = keep + eps;
            const double up = detail::gc_loss_at(block_values, model_loss);
            block_values[b][k] = keep - eps;
            const double dn = detail::gc_loss_at(block_values, model_loss);
            block_values[b][k] = keep;
            const double fd = (up - dn) / (2.0 * eps);
            const double denom = std::max({std::abs(grad[k]), std::abs(fd), 1e-3});
            worst = std::max(worst, std::abs(grad[k] - fd) / denom);
        }
        report.entries.push_back({entry_name, worst});
    }

    for (const GradCheckEntry& e : report.entries) report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    return report;
}

}  // namespace gmc
