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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gmc/csv.hpp"
#include "gmc/data.hpp"
#include "gmc/errors.hpp"
#include "gmc/graph.hpp"
#include "gmc/rng.hpp"
#include "gmc/srgcnn.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

/// Rank-based AUC with midrank tie handling: ties between a positive and a
/// negative score count one half. Exactly the normalized Mann-Whitney U.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw dimension_error("eval: roc_auc: scores/labels length mismatch");
    if (scores.empty()) throw parameter_error("eval: roc_auc: empty input");
    long npos = 0, nneg = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (!std::isfinite(scores[k])) throw validation_error("eval: roc_auc: non-finite score");
        if (labels[k] == 1) ++npos;
        else if (labels[k] == 0) ++nneg;
        else throw validation_error("eval: roc_auc: labels must be 0 or 1");
    }
    if (npos == 0 || nneg == 0) throw validation_error("eval: roc_auc: need both classes");

    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double mid = 0.5 * double(i + j) + 1.0;  // 1-based midrank of the tie group
        for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = mid;
        i = j + 1;
    }
    ExactAcc rank_sum;
    for (std::size_t k = 0; k < scores.size(); ++k)
        if (labels[k] == 1) rank_sum.add(rank[k]);
    const double u = rank_sum.value() - 0.5 * double(npos) * double(npos + 1);
    return u / (double(npos) * double(nneg));
}

/// Stratified fold assignment over the labeled rows: each class list is
/// shuffled once, then dealt round-robin, so per-fold class counts differ
/// from exact proportionality by at most one sample.
struct FoldPlan {
    index_t k = 0;
    std::vector<std::vector<index_t>> test_rows;   // per fold, ascending
    std::vector<std::vector<index_t>> train_rows;  // labeled rows outside the fold, ascending
    std::vector<int> labels;                       // stratification labels, -1 where unlabeled
    std::uint64_t seed = 0;
};

inline FoldPlan stratified_kfold(const std::vector<int>& labels, index_t k, std::uint64_t seed) {
    if (k < 2) throw parameter_error("eval: stratified_kfold: need at least 2 folds");
    std::vector<index_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) pos.push_back(index_t(i));
        else if (labels[i] == 0) neg.push_back(index_t(i));
        else if (labels[i] != -1) throw validation_error("eval: stratified_kfold: labels must be -1, 0 or 1");
    }
    if (index_t(pos.size()) < k || index_t(neg.size()) < k)
        throw parameter_error("eval: stratified_kfold: each class needs at least " + std::to_string(k) +
                              " labeled rows");
    Rng rng(seed);
    rng.shuffle(neg);
    rng.shuffle(pos);

    FoldPlan plan;
    plan.k = k;
    plan.labels = labels;
    plan.seed = seed;
    plan.test_rows.assign(static_cast<std::size_t>(k), {});
    for (std::size_t t = 0; t < neg.size(); ++t) plan.test_rows[t % std::size_t(k)].push_back(neg[t]);
    for (std::size_t t = 0; t < pos.size(); ++t) plan.test_rows[t % std::size_t(k)].push_back(pos[t]);
    plan.train_rows.assign(static_cast<std::size_t>(k), {});
    for (index_t f = 0; f < k; ++f) {
        std::sort(plan.test_rows[std::size_t(f)].begin(), plan.test_rows[std::size_t(f)].end());
        for (index_t g = 0; g < k; ++g)
            if (g != f)
                plan.train_rows[std::size_t(f)].insert(plan.train_rows[std::size_t(f)].end(),
                                                       plan.test_rows[std::size_t(g)].begin(),
                                                       plan.test_rows[std::size_t(g)].end());
        std::sort(plan.train_rows[std::size_t(f)].begin(), plan.train_rows[std::size_t(f)].end());
    }
    return plan;
}

/// Transductive view of one fold: the test rows keep their features and stay
/// in the graph, but their label entries are hidden from training.
inline MaskedDataset fold_view(const MaskedDataset& ds, const FoldPlan& plan, index_t fold) {
    if (fold < 0 || fold >= plan.k) throw parameter_error("eval: fold_view: fold index out of range");
    MaskedDataset out = ds;
    const index_t n = ds.features();
    for (index_t row : plan.test_rows[std::size_t(fold)]) {
        if (row < 0 || row >= ds.rows()) throw parameter_error("eval: fold_view: fold row out of range");
        for (index_t j = 0; j < ds.label_cols(); ++j) {
            out.omega_b(row, j) = 0.0;
            out.z(row, n + j) = 0.0;
        }
    }
    out.train_rows = plan.train_rows[std::size_t(fold)];
    out.test_rows = plan.test_rows[std::size_t(fold)];
    return out;
}

struct FoldMetrics {
    index_t fold = 0;
    double auc = 0.0;
    double accuracy = 0.0;
    double feature_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsReport {
    std::vector<FoldMetrics> folds;
    double mean_auc = 0.0, std_auc = 0.0;
    double mean_accuracy = 0.0, std_accuracy = 0.0;
    double mean_rmse = std::numeric_limits<double>::quiet_NaN();
    double std_rmse = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    ExactAcc sum;
    for (double x : xs) sum.add(x);
    const double mean = sum.value() / double(xs.size());
    ExactAcc var;
    for (double x : xs) var.add((x - mean) * (x - mean));
    return {mean, std::sqrt(var.value() / double(xs.size()))};
}

inline MetricsReport summarize(std::vector<FoldMetrics> folds) {
    MetricsReport rep;
    std::vector<double> auc, acc, rmse;
    for (const FoldMetrics& f : folds) {
        auc.push_back(f.auc);
        acc.push_back(f.accuracy);
        if (std::isfinite(f.feature_rmse)) rmse.push_back(f.feature_rmse);
    }
    rep.folds = std::move(folds);
    std::tie(rep.mean_auc, rep.std_auc) = mean_std(auc);
    std::tie(rep.mean_accuracy, rep.std_accuracy) = mean_std(acc);
    std::tie(rep.mean_rmse, rep.std_rmse) = mean_std(rmse);
    return rep;
}

/// Runs fn(0..count-1) on up to `workers` threads. Each call writes only its
/// own slot, so the outcome is bit-identical for any worker count.
template <class Fn>
void run_cells(index_t count, index_t workers, const Fn& fn) {
    const index_t w = std::max<index_t>(1, std::min(workers, count));
    if (w == 1) {
        for (index_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<index_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    pool.reserve(std::size_t(w));
    for (index_t t = 0; t < w; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const index_t i = next.fetch_add(1);
                if (i >= count || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) failure = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& th : pool) th.join();
    if (failed.load()) std::rethrow_exception(failure);
}

/// Held-out imputation error: cells observed in the reference dataset but
/// hidden in the working one, compared in the shared normalized units.
inline double holdout_rmse_vs(const MaskedDataset& truth, const MaskedDataset& working, const Tensor& imputed) {
    if (truth.rows() != working.rows() || truth.features() != working.features())
        throw dimension_error("eval: holdout_rmse_vs: dataset shapes disagree");
    ExactAcc acc;
    long cnt = 0;
    for (index_t i = 0; i < truth.rows(); ++i)
        for (index_t j = 0; j < truth.features(); ++j)
            if (truth.omega_a(i, j) == 1.0 && working.omega_a(i, j) == 0.0) {
                const double d = imputed(i, j) - truth.z(i, j);
                acc.add(d * d);
                ++cnt;
            }
    if (cnt == 0) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(acc.value() / double(cnt));
}

}  // namespace detail

/// Graph construction knobs shared by the evaluation drivers.
struct GraphConfig {
    enum class Variant { knn, similarity };
    Variant variant = Variant::similarity;
    index_t k = 5;               // neighbor count for the knn variant
    double age_threshold = 2.0;  // age window for the similarity variant

    void validate() const {
        if (variant == Variant::knn && k <= 0) throw parameter_error("eval: graph config: neighbor count must be positive");
        if (variant == Variant::similarity && age_threshold < 0.0)
            throw parameter_error("eval: graph config: negative age threshold");
    }
};

inline PopulationGraph build_graph(const MaskedDataset& ds, const GraphConfig& cfg) {
    cfg.validate();
    if (cfg.variant == GraphConfig::Variant::knn) {
        std::vector<double> ages;
        ages.reserve(ds.meta.size());
        for (const NodeMeta& m : ds.meta) ages.push_back(m.age);
        return knn_graph(ages, cfg.k);
    }
    return similarity_graph(ds.meta, cfg.age_threshold);
}

/// K-fold transductive evaluation of the model: per fold, hide the fold's
/// labels, train, and score the hidden rows. `truth` (when given) supplies
/// ground truth for cells hidden from `ds`, enabling the imputation RMSE.
inline MetricsReport evaluate_gmc(const MaskedDataset& ds, const FoldPlan& plan, const GraphConfig& graph_cfg,
                                  const TrainConfig& train_cfg, const MaskedDataset* truth = nullptr,
                                  index_t workers = 1) {
    const LaplacianSet lap = laplacians(build_graph(ds, graph_cfg));
    std::vector<FoldMetrics> folds(static_cast<std::size_t>(plan.k));
    detail::run_cells(plan.k, workers, [&](index_t f) {
        MaskedDataset view = fold_view(ds, plan, f);
        TrainResult res = train(view, lap, train_cfg);
        if (res.trace.aborted) throw numerical_error("eval: evaluate_gmc: " + res.trace.abort_message);
        Prediction pred = predict(res.params, lap, view, train_cfg.diffusion_steps);

        std::vector<double> scores;
        std::vector<int> ys;
        long correct = 0;
        for (index_t row : plan.test_rows[std::size_t(f)]) {
            const double p = pred.label_probs[std::size_t(row)];
            const int y = plan.labels[std::size_t(row)];
            scores.push_back(p);
            ys.push_back(y);
            if ((p > 0.5 ? 1 : 0) == y) ++correct;
        }
        FoldMetrics fm;
        fm.fold = f;
        fm.auc = roc_auc(scores, ys);
        fm.accuracy = double(correct) / double(scores.size());
        if (truth) fm.feature_rmse = detail::holdout_rmse_vs(*truth, ds, pred.imputed);
        folds[std::size_t(f)] = fm;
    });
    return detail::summarize(std::move(folds));
}

/// Logistic regression on the zero-imputed normalized features, trained by
/// the same tape machinery, evaluated on the same fold plan as the model.
/// The small seeded initialization keeps paired runs honest: a null problem
/// scores near 0.5 with per-seed wobble instead of a frozen constant.
inline MetricsReport baseline_logreg(const MaskedDataset& ds, const FoldPlan& plan, index_t epochs, double lr,
                                     std::uint64_t seed, index_t workers = 1) {
    if (epochs <= 0) throw parameter_error("eval: baseline_logreg: epochs must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw parameter_error("eval: baseline_logreg: learning rate must be positive");
    const index_t n = ds.features();
    std::vector<FoldMetrics> folds(static_cast<std::size_t>(plan.k));
    detail::run_cells(plan.k, workers, [&](index_t f) {
        const std::vector<index_t>& tr = plan.train_rows[std::size_t(f)];
        const std::vector<index_t>& te = plan.test_rows[std::size_t(f)];
        Tensor xtr(index_t(tr.size()), n), ytr(index_t(tr.size()), 1), ones(index_t(tr.size()), 1, 1.0);
        for (std::size_t i = 0; i < tr.size(); ++i) {
            for (index_t j = 0; j < n; ++j) xtr(index_t(i), j) = ds.z(tr[i], j);
            ytr(index_t(i), 0) = double(plan.labels[std::size_t(tr[i])]);
        }
        Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (std::uint64_t(f) + 1)));
        Tensor w = 0.01 * Tensor::randn(n, 1, rng);
        Tensor b(1, 1);
        Tensor mw(n, 1), vw(n, 1), mb(1, 1), vb(1, 1);
        const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        for (index_t epoch = 0; epoch < epochs; ++epoch) {
            ad::Tape tape;
            ad::Val wv = tape.var(w), bv = tape.var(b);
            ad::Val logits = tape.add_rowvec(tape.matmul(tape.constant(xtr), wv), bv);
            ad::Val loss = tape.masked_bce(logits, ytr, ones);
            tape.backward(loss);
            const Tensor& gw = tape.grad(wv);
            const Tensor& gb = tape.grad(bv);
            const double c1 = 1.0 - std::pow(beta1, double(epoch + 1));
            const double c2 = 1.0 - std::pow(beta2, double(epoch + 1));
            for (index_t k = 0; k < w.size(); ++k) {
                mw[k] = beta1 * mw[k] + (1.0 - beta1) * gw[k];
                vw[k] = beta2 * vw[k] + (1.0 - beta2) * gw[k] * gw[k];
                w[k] -= lr * (mw[k] / c1) / (std::sqrt(vw[k] / c2) + eps);
            }
            mb[0] = beta1 * mb[0] + (1.0 - beta1) * gb[0];
            vb[0] = beta2 * vb[0] + (1.0 - beta2) * gb[0] * gb[0];
            b[0] -= lr * (mb[0] / c1) / (std::sqrt(vb[0] / c2) + eps);
        }

        std::vector<double> scores;
        std::vector<int> ys;
        long correct = 0;
        for (index_t row : te) {
            double z = b(0, 0);
            for (index_t j = 0; j < n; ++j) z += ds.z(row, j) * w(j, 0);
            const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            const int y = plan.labels[std::size_t(row)];
            scores.push_back(p);
            ys.push_back(y);
            if ((p > 0.5 ? 1 : 0) == y) ++correct;
        }
        FoldMetrics fm;
        fm.fold = f;
        fm.auc = roc_auc(scores, ys);
        fm.accuracy = double(correct) / double(scores.size());
        folds[std::size_t(f)] = fm;
    });
    return detail::summarize(std::move(folds));
}

/// One row of the long-format ablation table.
struct AblationCell {
    std::string method;
    double fraction = 1.0;
    std::uint64_t seed = 0;
    index_t fold = 0;
    double auc = 0.0;
    double accuracy = 0.0;
    double feature_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct AblationTable {
    std::vector<double> fractions;
    std::vector<std::uint64_t> seeds;
    index_t k = 0;
    std::vector<std::string> methods;
    std::vector<AblationCell> rows;
};

inline const std::vector<std::string>& ablation_methods() {
    static const std::vector<std::string> methods = {"gmc_similarity", "gmc_knn", "baseline_logreg"};
    return methods;
}

/// One sweep cell: drop observed feature cells down to `fraction`, rebuild
/// the fold plan, and run both model graph variants plus the baseline on the
/// same folds (paired design). Rows come back method-major, fold order.
inline std::vector<AblationCell> ablation_cell(const MaskedDataset& ds, const GraphConfig& graph_cfg,
                                               const TrainConfig& train_cfg, double fraction,
                                               std::uint64_t seed, index_t k, index_t baseline_epochs,
                                               double baseline_lr, index_t workers = 1) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw parameter_error("eval: ablation_cell: fraction must lie in (0, 1]");
    const MaskedDataset dropped = dropout_features(ds, fraction, seed);
    const FoldPlan plan = stratified_kfold(dropped.labels, k, seed);
    TrainConfig cell_cfg = train_cfg;
    cell_cfg.seed = seed;
    const MaskedDataset* truth = fraction < 1.0 ? &ds : nullptr;

    GraphConfig sim_cfg = graph_cfg;
    sim_cfg.variant = GraphConfig::Variant::similarity;
    GraphConfig knn_cfg = graph_cfg;
    knn_cfg.variant = GraphConfig::Variant::knn;

    const MetricsReport sim = evaluate_gmc(dropped, plan, sim_cfg, cell_cfg, truth, workers);
    const MetricsReport knn = evaluate_gmc(dropped, plan, knn_cfg, cell_cfg, truth, workers);
    const MetricsReport base = baseline_logreg(dropped, plan, baseline_epochs, baseline_lr, seed, workers);

    std::vector<AblationCell> rows;
    const MetricsReport* reports[3] = {&sim, &knn, &base};
    for (std::size_t m = 0; m < ablation_methods().size(); ++m)
        for (const FoldMetrics& fm : reports[m]->folds)
            rows.push_back({ablation_methods()[m], fraction, seed, fm.fold, fm.auc, fm.accuracy,
                            fm.feature_rmse});
    return rows;
}

/// Feature-completeness sweep: every fraction x seed cell (masks nested
/// across fractions for a fixed seed). Rows appear in deterministic
/// fraction-major, seed, method, fold order.
inline AblationTable ablation_run(const MaskedDataset& ds, const GraphConfig& graph_cfg,
                                  const TrainConfig& train_cfg, const std::vector<double>& fractions,
                                  const std::vector<std::uint64_t>& seeds, index_t k = 10,
                                  index_t baseline_epochs = 400, double baseline_lr = 0.05,
                                  index_t workers = 1) {
    if (fractions.empty()) throw parameter_error("eval: ablation_run: no fractions");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0) || fractions[i] > 1.0)
            throw parameter_error("eval: ablation_run: fractions must lie in (0, 1]");
        if (i > 0 && fractions[i] >= fractions[i - 1])
            throw parameter_error("eval: ablation_run: fractions must be strictly descending");
    }
    if (seeds.empty()) throw parameter_error("eval: ablation_run: no seeds");

    AblationTable table;
    table.fractions = fractions;
    table.seeds = seeds;
    table.k = k;
    table.methods = ablation_methods();
    for (double fraction : fractions)
        for (std::uint64_t seed : seeds) {
            std::vector<AblationCell> rows =
                ablation_cell(ds, graph_cfg, train_cfg, fraction, seed, k, baseline_epochs, baseline_lr, workers);
            table.rows.insert(table.rows.end(), rows.begin(), rows.end());
        }
    return table;
}

/// Long-format CSV: method, fraction, seed, fold, auc, accuracy, rmse.
inline void write_ablation_csv(const std::string& path, const AblationTable& table) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(table.rows.size());
    for (const AblationCell& c : table.rows)
        rows.push_back({c.method, fmt_g17(c.fraction), std::to_string(c.seed), std::to_string(c.fold),
                        fmt_g17(c.auc), fmt_g17(c.accuracy), fmt_g17(c.feature_rmse)});
    write_csv_file(path, {"method", "fraction", "seed", "fold", "auc", "accuracy", "rmse"}, rows);
}

/// Per method x fraction summary (means and population stds over seed x fold
/// cells). NaN-valued RMSE aggregates (nothing was hidden) serialize as null.
inline nlohmann::json ablation_summary(const AblationTable& table) {
    nlohmann::json out;
    out["k"] = table.k;
    out["seeds"] = table.seeds;
    out["fractions"] = table.fractions;
    nlohmann::json methods = nlohmann::json::object();
    for (const std::string& method : table.methods) {
        nlohmann::json per_fraction = nlohmann::json::object();
        for (double fraction : table.fractions) {
            std::vector<double> auc, acc, rmse;
            for (const AblationCell& c : table.rows) {
                if (c.method != method || c.fraction != fraction) continue;
                auc.push_back(c.auc);
                acc.push_back(c.accuracy);
                if (std::isfinite(c.feature_rmse)) rmse.push_back(c.feature_rmse);
            }
            const auto [auc_mean, auc_std] = detail::mean_std(auc);
            const auto [acc_mean, acc_std] = detail::mean_std(acc);
            const auto [rmse_mean, rmse_std] = detail::mean_std(rmse);
            per_fraction[fmt_g17(fraction)] = {{"cells", auc.size()},
                                               {"auc_mean", auc_mean},
                                               {"auc_std", auc_std},
                                               {"accuracy_mean", acc_mean},
                                               {"accuracy_std", acc_std},
                                               {"rmse_mean", rmse_mean},
                                               {"rmse_std", rmse_std}};
        }
        methods[method] = std::move(per_fraction);
    }
    out["methods"] = std::move(methods);
    return out;
}

}  // namespace gmc
