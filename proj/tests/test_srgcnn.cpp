#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gmc/completion.hpp"
#include "gmc/data.hpp"
#include "gmc/gradcheck.hpp"
#include "gmc/srgcnn.hpp"
#include "planted.hpp"

using namespace gmc;

namespace {

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.rank = 4;
    cfg.cheb_order = 3;
    cfg.hidden_units = 8;
    cfg.learning_rate = 0.012;
    cfg.diffusion_steps = 3;
    cfg.epochs = 40;
    cfg.weights.gamma_a = 1.0;
    cfg.weights.gamma_b = 0.02;
    cfg.weights.gamma_c = 0.02;
    cfg.weights.gamma_d = 2.0;
    cfg.weights.gamma_e = 5.0;
    cfg.seed = seed;
    return cfg;
}

LaplacianSet path_lap(index_t m) {
    Tensor adj(m, m);
    for (index_t i = 0; i + 1 < m; ++i) {
        adj(i, i + 1) = 1.0;
        adj(i + 1, i) = 1.0;
    }
    return laplacians(PopulationGraph::from_adjacency(std::move(adj)));
}

ModelParams random_params(const MaskedDataset& ds, TrainConfig cfg, Rng& rng, double scale) {
    ModelParams params = init_params(ds, cfg);
    visit_blocks(params, [&](const std::string&, Tensor& t) {
        for (index_t k = 0; k < t.size(); ++k) t[k] = scale * rng.normal();
    });
    return params;
}

// out row i = in row perm[i]; index lists remapped through the inverse
MaskedDataset permute_dataset(const MaskedDataset& ds, const std::vector<index_t>& perm) {
    MaskedDataset out = ds;
    const index_t m = ds.rows();
    std::vector<index_t> inv(static_cast<std::size_t>(m));
    for (index_t i = 0; i < m; ++i) inv[std::size_t(perm[std::size_t(i)])] = i;
    for (index_t i = 0; i < m; ++i) {
        const index_t src = perm[std::size_t(i)];
        for (index_t j = 0; j < ds.z.cols(); ++j) out.z(i, j) = ds.z(src, j);
        for (index_t j = 0; j < ds.omega_a.cols(); ++j) out.omega_a(i, j) = ds.omega_a(src, j);
        for (index_t j = 0; j < ds.omega_b.cols(); ++j) out.omega_b(i, j) = ds.omega_b(src, j);
        out.meta[std::size_t(i)] = ds.meta[std::size_t(src)];
        out.labels[std::size_t(i)] = ds.labels[std::size_t(src)];
    }
    out.train_rows.clear();
    out.test_rows.clear();
    for (index_t r : ds.train_rows) out.train_rows.push_back(inv[std::size_t(r)]);
    for (index_t r : ds.test_rows) out.test_rows.push_back(inv[std::size_t(r)]);
    std::sort(out.train_rows.begin(), out.train_rows.end());
    std::sort(out.test_rows.begin(), out.test_rows.end());
    return out;
}

// held-out feature RMSE in normalized units against the generator's truth
double holdout_feature_rmse(const Tensor& pred, const MaskedDataset& ds, const SynthTruth& truth) {
    const index_t m = ds.rows(), n = ds.features();
    ExactAcc acc;
    long cnt = 0;
    for (index_t j = 0; j < n; ++j) {
        for (index_t i = 0; i < m; ++i) {
            if (ds.omega_a(i, j) == 1.0) continue;
            const double t = (truth.y(i, j) - ds.stats[std::size_t(j)].mean) / ds.stats[std::size_t(j)].stdev;
            const double d = pred(i, j) - t;
            acc.add(d * d);
            ++cnt;
        }
    }
    REQUIRE(cnt > 0);
    return std::sqrt(acc.value() / double(cnt));
}

void strip_labels(MaskedDataset& ds) {
    for (index_t i = 0; i < ds.rows(); ++i) {
        ds.omega_b(i, 0) = 0.0;
        ds.z(i, ds.features()) = 0.0;
    }
}

}  // namespace

TEST_CASE("order-zero filter with an identity bank is tanh") {
    Rng rng(6100);
    Tensor w = Tensor::randn(5, 3, rng);
    LaplacianSet lap = path_lap(5);
    Tensor eye(3, 3);
    for (index_t i = 0; i < 3; ++i) eye(i, i) = 1.0;

    ad::Tape t;
    ad::Val wv = t.var(w);
    ad::Val y = gcn_features(t, wv, lap, {t.var(eye)});
    for (index_t k = 0; k < w.size(); ++k) CHECK(t.value(y)[k] == std::tanh(w[k]));
}

TEST_CASE("zero filter banks give a zero feature map") {
    Rng rng(6101);
    Tensor w = Tensor::randn(6, 2, rng);
    LaplacianSet lap = path_lap(6);
    ad::Tape t;
    ad::Val y = gcn_features(t, t.var(w), lap, {t.var(Tensor(2, 4)), t.var(Tensor(2, 4)), t.var(Tensor(2, 4))});
    CHECK(t.value(y).rows() == 6);
    CHECK(t.value(y).cols() == 4);
    for (index_t k = 0; k < t.value(y).size(); ++k) CHECK(t.value(y)[k] == 0.0);
}

TEST_CASE("filter bank gradients match finite differences") {
    Rng rng(6102);
    Tensor w = Tensor::randn(6, 2, rng);
    Tensor c0 = 0.4 * Tensor::randn(2, 3, rng);
    Tensor c1 = 0.4 * Tensor::randn(2, 3, rng);
    Tensor c2 = 0.4 * Tensor::randn(2, 3, rng);
    LaplacianSet lap = path_lap(6);
    const double err = detail::gc_max_rel({w, c0, c1, c2}, [&lap](ad::Tape& t, const std::vector<ad::Val>& v) {
        return t.frobenius_sq(gcn_features(t, v[0], lap, {v[1], v[2], v[3]}));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("filter bank shape mismatches are rejected") {
    Rng rng(6103);
    Tensor w = Tensor::randn(5, 3, rng);
    LaplacianSet lap = path_lap(5);
    ad::Tape t;
    ad::Val wv = t.var(w);
    CHECK_THROWS_AS(gcn_features(t, wv, lap, {}), parameter_error);
    CHECK_THROWS_AS(gcn_features(t, wv, lap, {t.var(Tensor(2, 4))}), dimension_error);
    CHECK_THROWS_AS(gcn_features(t, wv, lap, {t.var(Tensor(3, 4)), t.var(Tensor(3, 5))}), dimension_error);
}

TEST_CASE("zero increment projection freezes the row factor") {
    SynthInstance inst = synth_instance(10, 5, 2, 0.1, 0.8, 1.5, 6104);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6104);
    Rng rng(6104);
    ModelParams params = random_params(inst.ds, cfg, rng, 0.3);
    params.out_w = Tensor(params.h, params.r);
    params.out_b = Tensor(1, params.r);

    ad::Tape t;
    ParamVals pv = lift(t, params);
    ad::Val w5 = diffuse(t, pv, lap, 5);
    for (index_t k = 0; k < params.w0.size(); ++k) CHECK(t.value(w5)[k] == params.w0[k]);
}

TEST_CASE("diffusion is deterministic and matches a manual unroll") {
    SynthInstance inst = synth_instance(9, 5, 2, 0.1, 0.8, 1.5, 6105);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6105);
    Rng rng(6105);
    ModelParams params = random_params(inst.ds, cfg, rng, 0.3);

    ad::Tape t1;
    ad::Val a = diffuse(t1, lift(t1, params), lap, 2);
    ad::Tape t2;
    ad::Val b = diffuse(t2, lift(t2, params), lap, 2);
    for (index_t k = 0; k < t1.value(a).size(); ++k) CHECK(t1.value(a)[k] == t2.value(b)[k]);

    ad::Tape t3;
    ParamVals pv = lift(t3, params);
    ad::Val w = pv.w0;
    ad::Val hs = t3.constant(Tensor(params.m, params.h));
    ad::Val cs = t3.constant(Tensor(params.m, params.h));
    for (int step = 0; step < 2; ++step) {
        ad::Val x = gcn_features(t3, w, lap, pv.cheb);
        ad::Val ig = t3.sigmoid(t3.add_rowvec(t3.add(t3.matmul(x, pv.wxi), t3.matmul(hs, pv.whi)), pv.bi));
        ad::Val fg = t3.sigmoid(t3.add_rowvec(t3.add(t3.matmul(x, pv.wxf), t3.matmul(hs, pv.whf)), pv.bf));
        ad::Val gg = t3.tanh(t3.add_rowvec(t3.add(t3.matmul(x, pv.wxg), t3.matmul(hs, pv.whg)), pv.bg));
        ad::Val og = t3.sigmoid(t3.add_rowvec(t3.add(t3.matmul(x, pv.wxo), t3.matmul(hs, pv.who)), pv.bo));
        cs = t3.add(t3.hadamard(fg, cs), t3.hadamard(ig, gg));
        hs = t3.hadamard(og, t3.tanh(cs));
        w = t3.add(w, t3.add_rowvec(t3.matmul(hs, pv.out_w), pv.out_b));
    }
    for (index_t k = 0; k < t1.value(a).size(); ++k) CHECK(t1.value(a)[k] == t3.value(w)[k]);
}

TEST_CASE("diffusion gradients through three steps match finite differences") {
    SynthInstance inst = synth_instance(8, 4, 2, 0.1, 0.8, 1.5, 6106);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6106);
    cfg.rank = 3;
    cfg.cheb_order = 2;
    cfg.hidden_units = 3;
    Rng rng(6106);
    ModelParams params = random_params(inst.ds, cfg, rng, 0.35);

    std::vector<Tensor> leaves;
    visit_blocks(params, [&](const std::string&, const Tensor& t) { leaves.push_back(t); });
    const index_t order = params.p;
    const double err =
        detail::gc_max_rel(leaves, [&lap, order](ad::Tape& t, const std::vector<ad::Val>& v) {
            ParamVals pv = assemble_param_vals(v, order);
            return t.frobenius_sq(diffuse(t, pv, lap, 3));
        });
    CHECK(err < 1e-4);
}

TEST_CASE("diffusion validates the step count and names the failing step") {
    SynthInstance inst = synth_instance(8, 4, 2, 0.1, 0.8, 1.5, 6107);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6107);
    Rng rng(6107);
    ModelParams params = random_params(inst.ds, cfg, rng, 0.3);

    {
        ad::Tape t;
        ParamVals pv = lift(t, params);
        CHECK_THROWS_AS(diffuse(t, pv, lap, 0), parameter_error);
    }

    params.w0(0, 0) = 1e308;
    params.out_b(0, 0) = 1e308;
    ad::Tape t;
    ParamVals pv = lift(t, params);
    try {
        diffuse(t, pv, lap, 2);
        FAIL("expected numerical_error");
    } catch (const numerical_error& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("all-zero weights give a zero loss") {
    SynthInstance inst = synth_instance(8, 4, 2, 0.1, 0.8, 1.5, 6108);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    PenaltyWeights w;
    Rng rng(6108);
    ad::Tape t;
    ad::Val wf = t.var(Tensor::randn(8, 3, rng));
    ad::Val hc = t.var(Tensor::randn(5, 3, rng));
    ad::Val loss = loss_eq6(t, wf, hc, inst.ds, lap, w);
    CHECK(t.value(loss)(0, 0) == 0.0);
}

TEST_CASE("data term alone at zero factors measures the observed features") {
    SynthInstance inst = synth_instance(9, 5, 2, 0.1, 0.7, 1.5, 6109);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    PenaltyWeights w;
    w.gamma_d = 3.7;
    ad::Tape t;
    ad::Val wf = t.var(Tensor(9, 3));
    ad::Val hc = t.var(Tensor(6, 3));
    ad::Val loss = loss_eq6(t, wf, hc, inst.ds, lap, w);

    auto [mask_a, mask_b] = detail::full_width_masks(inst.ds);
    const double expect = 0.5 * 3.7 * hadamard(inst.ds.z, mask_a).frob_sq();
    CHECK(t.value(loss)(0, 0) == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("loss matches a term-by-term recomputation") {
    SynthInstance inst = synth_instance(14, 6, 2, 0.1, 0.6, 1.5, 6110);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    PenaltyWeights w;
    w.gamma_a = 0.9;
    w.gamma_b = 0.25;
    w.gamma_c = 0.35;
    w.gamma_d = 1.4;
    w.gamma_e = 2.2;
    Rng rng(6110);
    Tensor wf = 0.5 * Tensor::randn(14, 4, rng);
    Tensor hc = 0.5 * Tensor::randn(7, 4, rng);

    ad::Tape t;
    ad::Val loss = loss_eq6(t, t.var(wf), t.var(hc), inst.ds, lap, w);

    const Tensor x = matmul_nt(wf, hc);
    auto [mask_a, mask_b] = detail::full_width_masks(inst.ds);
    double expect = 0.5 * w.gamma_a * dot_all(wf, matmul(lap.lap_norm, wf));
    expect += 0.5 * w.gamma_b * wf.frob_sq();
    expect += 0.5 * w.gamma_c * hc.frob_sq();
    expect += 0.5 * w.gamma_d * hadamard(inst.ds.z - x, mask_a).frob_sq();
    ExactAcc bce;
    double cnt = 0.0;
    for (index_t k = 0; k < x.size(); ++k) {
        if (mask_b[k] == 0.0) continue;
        const double z = x[k], y = inst.ds.z[k];
        bce.add(std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
        cnt += 1.0;
    }
    expect += w.gamma_e * bce.value() / cnt;
    CHECK(std::abs(t.value(loss)(0, 0) - expect) < 1e-10);
}

TEST_CASE("loss validations") {
    SynthInstance inst = synth_instance(8, 4, 2, 0.1, 0.8, 1.5, 6111);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    PenaltyWeights w;
    w.gamma_e = 1.0;

    MaskedDataset unlabeled = inst.ds;
    strip_labels(unlabeled);
    ad::Tape t;
    ad::Val wf = t.var(Tensor(8, 3));
    ad::Val hc = t.var(Tensor(5, 3));
    CHECK_THROWS_AS(loss_eq6(t, wf, hc, unlabeled, lap, w), validation_error);
    CHECK_THROWS_AS(loss_eq6(t, t.var(Tensor(7, 3)), hc, inst.ds, lap, w), dimension_error);
    CHECK_THROWS_AS(loss_eq6(t, wf, t.var(Tensor(4, 3)), inst.ds, lap, w), dimension_error);
    CHECK_THROWS_AS(loss_eq6(t, wf, t.var(Tensor(5, 2)), inst.ds, lap, w), dimension_error);
}

TEST_CASE("training reduces the loss and is bit-reproducible") {
    SynthInstance inst = synth_instance(30, 8, 2, 0.1, 0.6, 2.0, 6112);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6112);

    TrainResult a = train(inst.ds, lap, cfg);
    TrainResult b = train(inst.ds, lap, cfg);
    REQUIRE_FALSE(a.trace.aborted);
    REQUIRE(a.trace.losses.size() >= 2);
    CHECK(a.trace.losses.back() < a.trace.losses.front());
    for (double f : a.trace.losses) CHECK(std::isfinite(f));

    REQUIRE(a.trace.losses.size() == b.trace.losses.size());
    for (std::size_t k = 0; k < a.trace.losses.size(); ++k) CHECK(a.trace.losses[k] == b.trace.losses[k]);
    bool same = true;
    std::vector<const Tensor*> ba, bb;
    visit_blocks(a.params, [&](const std::string&, const Tensor& t) { ba.push_back(&t); });
    visit_blocks(b.params, [&](const std::string&, const Tensor& t) { bb.push_back(&t); });
    for (std::size_t i = 0; i < ba.size(); ++i)
        for (index_t k = 0; k < ba[i]->size(); ++k) same = same && (*ba[i])[k] == (*bb[i])[k];
    CHECK(same);
}

TEST_CASE("stalled training stops early") {
    SynthInstance inst = synth_instance(12, 5, 2, 0.1, 0.8, 1.5, 6113);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6113);
    cfg.learning_rate = 1e-30;
    cfg.epochs = 400;
    TrainResult res = train(inst.ds, lap, cfg);
    CHECK(res.trace.early_stopped);
    CHECK(res.trace.losses.size() == std::size_t(cfg.early_stop_patience) + 1);
}

TEST_CASE("diverging training aborts with the partial trace") {
    SynthInstance inst = synth_instance(12, 5, 2, 0.1, 0.8, 1.5, 6114);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6114);
    cfg.learning_rate = 1e154;
    cfg.epochs = 10;
    TrainResult res = train(inst.ds, lap, cfg);
    CHECK(res.trace.aborted);
    CHECK_FALSE(res.trace.abort_message.empty());
    CHECK(res.trace.losses.size() >= 1);
    CHECK(res.trace.losses.size() < 10);
    for (double f : res.trace.losses) CHECK(std::isfinite(f));
}

TEST_CASE("training requires labels when the label weight is positive") {
    SynthInstance inst = synth_instance(12, 5, 2, 0.1, 0.8, 1.5, 6115);
    MaskedDataset ds = inst.ds;
    strip_labels(ds);
    LaplacianSet lap = laplacians(similarity_graph(ds.meta, 2.0));
    CHECK_THROWS_AS(train(ds, lap, small_config(6115)), parameter_error);
}

TEST_CASE("invalid configurations are rejected") {
    SynthInstance inst = synth_instance(12, 5, 2, 0.1, 0.8, 1.5, 6116);
    TrainConfig cfg = small_config(6116);
    cfg.rank = 0;
    CHECK_THROWS_AS(cfg.validate(), parameter_error);
    cfg = small_config(6116);
    cfg.rank = 7;  // exceeds min(12, 6)
    CHECK_THROWS_AS(init_params(inst.ds, cfg), parameter_error);
    cfg = small_config(6116);
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), parameter_error);
    CHECK_THROWS_AS(assemble_param_vals(std::vector<ad::Val>(5), 3), parameter_error);
}

TEST_CASE("parameter count is deterministic and matches the block shapes") {
    SynthInstance inst = synth_instance(12, 5, 2, 0.1, 0.8, 1.5, 6117);
    TrainConfig cfg = small_config(6117);
    ModelParams params = init_params(inst.ds, cfg);
    // (p+1) r q + 4 q h + 4 h h + 4 h + h r + r + m r + (n+c) r
    const index_t r = cfg.rank, p = cfg.cheb_order, h = cfg.hidden_units, q = h;
    const index_t expect = (p + 1) * r * q + 4 * q * h + 4 * h * h + 4 * h + h * r + r + 12 * r + 6 * r;
    CHECK(params.param_count() == expect);
    CHECK(init_params(inst.ds, cfg).param_count() == expect);
}

TEST_CASE("prediction passes observed entries through and emits probabilities") {
    SynthInstance inst = synth_instance(20, 6, 2, 0.1, 0.6, 2.0, 6118);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6118);
    cfg.epochs = 25;
    TrainResult res = train(inst.ds, lap, cfg);
    Prediction pred = predict(res.params, lap, inst.ds, cfg.diffusion_steps);

    REQUIRE(pred.imputed.rows() == 20);
    REQUIRE(pred.imputed.cols() == inst.ds.features());
    for (index_t i = 0; i < 20; ++i)
        for (index_t j = 0; j < inst.ds.features(); ++j)
            if (inst.ds.omega_a(i, j) == 1.0) CHECK(pred.imputed(i, j) == inst.ds.z(i, j));
    REQUIRE(pred.label_probs.size() == 20);
    for (double p : pred.label_probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("imputation beats column means across paired seeds") {
    int wins = 0;
    for (int s = 0; s < 10; ++s) {
        SynthInstance inst = synth_instance(60, 12, 2, 0.05, 0.5, 2.0, 800 + s);
        LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
        TrainConfig cfg = small_config(800 + std::uint64_t(s));
        cfg.rank = 4;
        cfg.cheb_order = 3;
        cfg.hidden_units = 12;
        cfg.diffusion_steps = 4;
        cfg.epochs = 200;
        TrainResult res = train(inst.ds, lap, cfg);
        REQUIRE_FALSE(res.trace.aborted);
        Prediction pred = predict(res.params, lap, inst.ds, cfg.diffusion_steps);
        const double model_rmse = holdout_feature_rmse(pred.imputed, inst.ds, inst.truth);
        // column means equal zero in normalized units
        const double mean_rmse = holdout_feature_rmse(Tensor(60, 12), inst.ds, inst.truth);
        if (model_rmse < mean_rmse) ++wins;
    }
    CHECK(wins >= 8);
}

TEST_CASE("withheld labels and a zero label weight reduce to graph completion") {
    std::vector<double> model_rmse, direct_rmse;
    for (int s = 0; s < 10; ++s) {
        SynthInstance inst = synth_instance(60, 12, 2, 0.05, 0.5, 2.0, 700 + s);
        MaskedDataset ds = inst.ds;
        strip_labels(ds);
        LaplacianSet lap = laplacians(similarity_graph(ds.meta, 2.0));
        TrainConfig cfg;
        cfg.rank = 4;
        cfg.cheb_order = 3;
        cfg.hidden_units = 12;
        cfg.learning_rate = 0.01;
        cfg.diffusion_steps = 4;
        cfg.epochs = 400;
        cfg.weights = PenaltyWeights{};
        cfg.weights.gamma_a = 1.0;
        cfg.weights.gamma_c = 1.0;
        cfg.weights.gamma_d = 20.0;
        cfg.seed = 700 + std::uint64_t(s);
        TrainResult res = train(ds, lap, cfg);
        REQUIRE_FALSE(res.trace.aborted);
        Prediction pred = predict(res.params, lap, ds, cfg.diffusion_steps);
        model_rmse.push_back(holdout_feature_rmse(pred.imputed, ds, inst.truth));

        Tensor feat(ds.rows(), ds.features());
        for (index_t i = 0; i < ds.rows(); ++i)
            for (index_t j = 0; j < ds.features(); ++j) feat(i, j) = ds.z(i, j);
        MaskedMatrix y(feat, ds.omega_a);
        PenaltyWeights w;
        w.gamma = 20.0;
        FactorizedResult fr = factorized_graph_complete(y, 4, lap.lap, nullptr, w, 4000, 1e-10, 0);
        direct_rmse.push_back(holdout_feature_rmse(fr.fac.reconstruct(), ds, inst.truth));
    }
    std::sort(model_rmse.begin(), model_rmse.end());
    std::sort(direct_rmse.begin(), direct_rmse.end());
    const double model_median = 0.5 * (model_rmse[4] + model_rmse[5]);
    const double direct_median = 0.5 * (direct_rmse[4] + direct_rmse[5]);
    CHECK(model_median <= 1.2 * direct_median);
}

TEST_CASE("joint row permutation permutes predictions bitwise") {
    SynthInstance inst = synth_instance(25, 8, 2, 0.1, 0.6, 2.0, 4242);
    TrainConfig cfg = small_config(4242);

    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainResult base = train(inst.ds, lap, cfg);
    Prediction pb = predict(base.params, lap, inst.ds, cfg.diffusion_steps);

    const std::vector<index_t> perm = {7, 19, 3,  22, 0,  14, 9, 24, 1,  17, 5,  11, 20,
                                       2, 8,  23, 12, 4,  16, 10, 21, 6,  18, 13, 15};
    MaskedDataset pds = permute_dataset(inst.ds, perm);
    LaplacianSet plap = laplacians(similarity_graph(pds.meta, 2.0));
    TrainResult pr = train(pds, plap, cfg);
    Prediction pp = predict(pr.params, plap, pds, cfg.diffusion_steps);

    bool same = true;
    for (index_t i = 0; i < 25; ++i)
        same = same && pp.label_probs[std::size_t(i)] == pb.label_probs[std::size_t(perm[std::size_t(i)])];
    CHECK(same);
    bool same_imp = true;
    for (index_t i = 0; i < 25; ++i)
        for (index_t j = 0; j < pds.features(); ++j)
            same_imp = same_imp && pp.imputed(i, j) == pb.imputed(perm[std::size_t(i)], j);
    CHECK(same_imp);
}

TEST_CASE("checkpoints round trip bitwise and rewrites are byte-stable") {
    SynthInstance inst = synth_instance(15, 6, 2, 0.1, 0.7, 1.5, 6119);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg = small_config(6119);
    cfg.epochs = 15;
    TrainResult res = train(inst.ds, lap, cfg);

    const std::string path = "/tmp/gmc_ckpt_test.json";
    save_checkpoint(path, res.params, cfg);
    auto [loaded, lcfg] = load_checkpoint(path);

    bool same = true;
    std::vector<const Tensor*> ba, bb;
    visit_blocks(res.params, [&](const std::string&, const Tensor& t) { ba.push_back(&t); });
    visit_blocks(loaded, [&](const std::string&, const Tensor& t) { bb.push_back(&t); });
    REQUIRE(ba.size() == bb.size());
    for (std::size_t i = 0; i < ba.size(); ++i) {
        REQUIRE(ba[i]->size() == bb[i]->size());
        for (index_t k = 0; k < ba[i]->size(); ++k) same = same && (*ba[i])[k] == (*bb[i])[k];
    }
    CHECK(same);
    CHECK(lcfg.rank == cfg.rank);
    CHECK(lcfg.cheb_order == cfg.cheb_order);
    CHECK(lcfg.hidden_units == cfg.hidden_units);
    CHECK(lcfg.learning_rate == cfg.learning_rate);
    CHECK(lcfg.diffusion_steps == cfg.diffusion_steps);
    CHECK(lcfg.epochs == cfg.epochs);
    CHECK(lcfg.seed == cfg.seed);
    CHECK(lcfg.weights.gamma_e == cfg.weights.gamma_e);

    const std::string path2 = "/tmp/gmc_ckpt_test2.json";
    save_checkpoint(path2, res.params, cfg);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    CHECK_THROWS_AS(load_checkpoint("/tmp/gmc_ckpt_missing.json"), io_error);
    std::ofstream bad("/tmp/gmc_ckpt_bad.json", std::ios::binary);
    bad << "{not json";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint("/tmp/gmc_ckpt_bad.json"), parse_error);
}

TEST_CASE("reference training trace is finite with a non-increasing moving average") {
    SynthInstance inst = synth_instance(120, 20, 2, 0.1, 0.5, 12.0, 300);
    LaplacianSet lap = laplacians(similarity_graph(inst.ds.meta, 2.0));
    TrainConfig cfg;
    cfg.rank = 6;
    cfg.cheb_order = 3;
    cfg.hidden_units = 12;
    cfg.learning_rate = 0.012;
    cfg.diffusion_steps = 4;
    cfg.epochs = 200;
    cfg.weights.gamma_a = 1.0;
    cfg.weights.gamma_b = 0.02;
    cfg.weights.gamma_c = 0.02;
    cfg.weights.gamma_d = 2.0;
    cfg.weights.gamma_e = 5.0;
    cfg.seed = 300;
    TrainResult res = train(inst.ds, lap, cfg);
    REQUIRE_FALSE(res.trace.aborted);
    const std::vector<double>& losses = res.trace.losses;
    REQUIRE(losses.size() >= 100);
    for (double f : losses) REQUIRE(std::isfinite(f));

    double prev = 0.0;
    bool first = true;
    for (std::size_t k = 0; k + 50 <= losses.size(); ++k) {
        ExactAcc acc;
        for (std::size_t j = k; j < k + 50; ++j) acc.add(losses[j]);
        const double avg = acc.value() / 50.0;
        if (!first) CHECK(avg <= prev);
        prev = avg;
        first = false;
    }
    CHECK(losses.back() < losses.front());
}

TEST_CASE("gradient check suite passes and the corruption hook fails it") {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport rep = run_gradcheck();
    const auto t1 = std::chrono::steady_clock::now();
    CHECK(rep.passed());
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(std::chrono::duration<double>(t1 - t0).count() < 60.0);

    // one entry per primitive op and per model block
    auto has = [&](const std::string& name) {
        for (const GradCheckEntry& e : rep.entries)
            if (e.name == name) return true;
        return false;
    };
    for (const char* op : {"op:matmul", "op:matmul_nt", "op:add", "op:sub", "op:hadamard", "op:scale",
                           "op:sigmoid", "op:tanh", "op:add_rowvec", "op:frobenius_sq", "op:dirichlet_dense",
                           "op:dirichlet_sparse", "op:spmm", "op:masked_bce"})
        CHECK(has(op));
    for (const char* blk : {"model:cheb_0", "model:cheb_2", "model:wxi", "model:who", "model:bi",
                            "model:out_w", "model:out_b", "model:w0", "model:hcol"})
        CHECK(has(blk));

    GradCheckReport corrupted = run_gradcheck(20260818, "model:wxi");
    CHECK_FALSE(corrupted.passed());
    GradCheckReport corrupted_op = run_gradcheck(20260818, "op:matmul");
    CHECK_FALSE(corrupted_op.passed());
}
