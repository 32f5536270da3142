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
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gmc/csv.hpp"
#include "gmc/errors.hpp"
#include "gmc/graph.hpp"
#include "gmc/rng.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

/// Parsed CSV contents before normalization: raw feature values (zero where
/// missing), per-cell missingness, labels (-1 unknown), and node metadata.
struct RawTable {
    std::vector<std::string> feature_names;
    Tensor features;
    Tensor feature_mask;
    std::vector<int> labels;
    std::vector<NodeMeta> meta;

    index_t rows() const { return features.rows(); }
    index_t cols() const { return features.cols(); }
};

struct ColumnStats {
    std::string name;
    double mean = 0.0;
    double stdev = 1.0;
};

/// Assembled heterogeneous matrix Z = [features | labels] with its two masks.
/// Feature columns are z-scored from observed training entries; unobserved
/// cells are zero. The label mask is 1 exactly on training rows.
struct MaskedDataset {
    Tensor z;        // m x (n + c)
    Tensor omega_a;  // m x n
    Tensor omega_b;  // m x c
    std::vector<ColumnStats> stats;    // kept feature columns
    std::vector<std::string> dropped;  // "column: reason" warnings
    std::vector<NodeMeta> meta;
    std::vector<int> labels;  // -1 unknown, else 0/1 (evaluation bookkeeping)
    std::vector<index_t> train_rows;
    std::vector<index_t> test_rows;
    std::uint64_t seed = 0;

    index_t rows() const { return z.rows(); }
    index_t features() const { return omega_a.cols(); }
    index_t label_cols() const { return omega_b.cols(); }
};

/// Parses a CSV with header row into a raw table. Empty cells and the
/// sentinel mean missing. The label column accepts cMCI/sMCI (encoded 1/0),
/// numeric 0/1, or missing; rows with missing labels are kept as transductive
/// candidates. Gender strings are coded by first appearance.
inline RawTable load_csv(const std::string& path, const std::string& label_column,
                         const std::string& age_column, const std::string& gender_column,
                         const std::string& missing_sentinel = "") {
    CsvTable csv = read_csv_file(path);
    auto find = [&](const std::string& name) {
        for (std::size_t j = 0; j < csv.header.size(); ++j)
            if (csv.header[j] == name) return static_cast<std::ptrdiff_t>(j);
        return static_cast<std::ptrdiff_t>(-1);
    };
    const std::ptrdiff_t label_at = find(label_column);
    const std::ptrdiff_t age_at = find(age_column);
    const std::ptrdiff_t gender_at = find(gender_column);
    if (label_at < 0) throw schema_error("data: load_csv: missing column '" + label_column + "'");
    if (age_at < 0) throw schema_error("data: load_csv: missing column '" + age_column + "'");
    if (gender_at < 0)
        throw schema_error("data: load_csv: missing column '" + gender_column + "'");

    std::vector<std::size_t> feature_cols;
    RawTable raw;
    for (std::size_t j = 0; j < csv.header.size(); ++j) {
        const auto sj = static_cast<std::ptrdiff_t>(j);
        if (sj == label_at || sj == age_at || sj == gender_at) continue;
        feature_cols.push_back(j);
        raw.feature_names.push_back(csv.header[j]);
    }
    const auto m = static_cast<index_t>(csv.rows.size());
    const auto n = static_cast<index_t>(feature_cols.size());
    raw.features = Tensor(m, n);
    raw.feature_mask = Tensor(m, n);
    raw.labels.assign(static_cast<std::size_t>(m), -1);
    raw.meta.resize(static_cast<std::size_t>(m));

    std::map<std::string, int> gender_codes;
    const auto missing = [&](const std::string& cell) {
        return cell.empty() || cell == missing_sentinel;
    };
    for (index_t i = 0; i < m; ++i) {
        const auto& row = csv.rows[static_cast<std::size_t>(i)];
        const std::string where = "data: load_csv: row " + std::to_string(i + 1);
        for (index_t k = 0; k < n; ++k) {
            const std::string& cell = row[feature_cols[static_cast<std::size_t>(k)]];
            if (missing(cell)) continue;
            raw.features(i, k) = parse_number(
                cell, where + ", column '" + raw.feature_names[static_cast<std::size_t>(k)] + "'");
            raw.feature_mask(i, k) = 1.0;
        }
        const std::string& lab = row[static_cast<std::size_t>(label_at)];
        if (missing(lab)) {
            raw.labels[static_cast<std::size_t>(i)] = -1;
        } else if (lab == "cMCI") {
            raw.labels[static_cast<std::size_t>(i)] = 1;
        } else if (lab == "sMCI") {
            raw.labels[static_cast<std::size_t>(i)] = 0;
        } else {
            const double v =
                parse_number(lab, where + ", column '" + label_column + "'");
            if (v != 0.0 && v != 1.0)
                throw parse_error(where + ", column '" + label_column +
                                  "': label must be binary, got '" + lab + "'");
            raw.labels[static_cast<std::size_t>(i)] = v != 0.0 ? 1 : 0;
        }
        const std::string& age = row[static_cast<std::size_t>(age_at)];
        if (missing(age))
            throw parse_error(where + ", column '" + age_column + "': age is required");
        raw.meta[static_cast<std::size_t>(i)].age =
            parse_number(age, where + ", column '" + age_column + "'");
        const std::string& gender = row[static_cast<std::size_t>(gender_at)];
        if (missing(gender))
            throw parse_error(where + ", column '" + gender_column + "': gender is required");
        auto it = gender_codes.find(gender);
        if (it == gender_codes.end())
            it = gender_codes.emplace(gender, static_cast<int>(gender_codes.size())).first;
        raw.meta[static_cast<std::size_t>(i)].gender = it->second;
    }
    return raw;
}

namespace detail {

inline void check_split(index_t m, const std::vector<index_t>& train,
                        const std::vector<index_t>& test, const char* who) {
    std::vector<int> seen(static_cast<std::size_t>(m), 0);
    auto mark = [&](const std::vector<index_t>& rows) {
        for (index_t r : rows) {
            if (r < 0 || r >= m)
                throw parameter_error(std::string(who) + ": row index out of range");
            if (seen[static_cast<std::size_t>(r)]++)
                throw parameter_error(std::string(who) + ": train/test rows overlap");
        }
    };
    mark(train);
    mark(test);
    for (index_t i = 0; i < m; ++i)
        if (!seen[static_cast<std::size_t>(i)])
            throw parameter_error(std::string(who) + ": row " + std::to_string(i) +
                                  " is in neither split");
}

}  // namespace detail

/// Builds the normalized dataset for one train/test split. Feature statistics
/// come from observed training entries only; columns with no observed
/// training entries or with constant observed training values are dropped
/// with a recorded warning. Every training row must be labeled.
inline MaskedDataset assemble(const RawTable& raw, std::vector<index_t> train_rows,
                              std::vector<index_t> test_rows, std::uint64_t seed) {
    const char* who = "data: assemble";
    const index_t m = raw.rows();
    if (m == 0) throw parameter_error(std::string(who) + ": empty table");
    detail::check_split(m, train_rows, test_rows, who);
    std::vector<char> is_train(static_cast<std::size_t>(m), 0);
    for (index_t r : train_rows) {
        if (raw.labels[static_cast<std::size_t>(r)] < 0)
            throw parameter_error(std::string(who) + ": training row " + std::to_string(r) +
                                  " has no label");
        is_train[static_cast<std::size_t>(r)] = 1;
    }

    // Column statistics over observed training entries.
    std::vector<index_t> kept;
    MaskedDataset ds;
    for (index_t k = 0; k < raw.cols(); ++k) {
        ExactAcc sum;
        index_t cnt = 0;
        double vmin = 0.0, vmax = 0.0;
        for (index_t i = 0; i < m; ++i) {
            if (!is_train[static_cast<std::size_t>(i)] || raw.feature_mask(i, k) == 0.0) continue;
            const double v = raw.features(i, k);
            if (cnt == 0) {
                vmin = vmax = v;
            } else {
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
            sum.add(v);
            ++cnt;
        }
        const std::string& name = raw.feature_names[static_cast<std::size_t>(k)];
        if (cnt == 0) {
            ds.dropped.push_back(name + ": no observed training entries");
            continue;
        }
        if (vmin == vmax) {
            ds.dropped.push_back(name + ": constant in training rows");
            continue;
        }
        const double mean = sum.value() / double(cnt);
        ExactAcc var;
        for (index_t i = 0; i < m; ++i) {
            if (!is_train[static_cast<std::size_t>(i)] || raw.feature_mask(i, k) == 0.0) continue;
            const double d = raw.features(i, k) - mean;
            var.add(d * d);
        }
        kept.push_back(k);
        ds.stats.push_back({name, mean, std::sqrt(var.value() / double(cnt))});
    }
    if (kept.empty()) throw parameter_error(std::string(who) + ": all feature columns dropped");

    const auto n = static_cast<index_t>(kept.size());
    const index_t c = 1;
    ds.z = Tensor(m, n + c);
    ds.omega_a = Tensor(m, n);
    ds.omega_b = Tensor(m, c);
    for (index_t j = 0; j < n; ++j) {
        const index_t k = kept[static_cast<std::size_t>(j)];
        const ColumnStats& st = ds.stats[static_cast<std::size_t>(j)];
        for (index_t i = 0; i < m; ++i) {
            if (raw.feature_mask(i, k) == 0.0) continue;
            ds.omega_a(i, j) = 1.0;
            ds.z(i, j) = (raw.features(i, k) - st.mean) / st.stdev;
        }
    }
    for (index_t i = 0; i < m; ++i) {
        if (!is_train[static_cast<std::size_t>(i)]) continue;
        ds.omega_b(i, 0) = 1.0;
        ds.z(i, n) = double(raw.labels[static_cast<std::size_t>(i)]);
    }
    ds.meta = raw.meta;
    ds.labels = raw.labels;
    ds.train_rows = std::move(train_rows);
    ds.test_rows = std::move(test_rows);
    ds.seed = seed;
    return ds;
}

/// Inverse of assemble's normalization: raw-scale features at observed cells,
/// labels and metadata carried through. Dropped columns are gone for good.
inline RawTable denormalize(const MaskedDataset& ds) {
    RawTable raw;
    const index_t m = ds.rows(), n = ds.features();
    raw.features = Tensor(m, n);
    raw.feature_mask = ds.omega_a;
    for (index_t j = 0; j < n; ++j) {
        raw.feature_names.push_back(ds.stats[static_cast<std::size_t>(j)].name);
        for (index_t i = 0; i < m; ++i)
            if (ds.omega_a(i, j) != 0.0)
                raw.features(i, j) = ds.z(i, j) * ds.stats[static_cast<std::size_t>(j)].stdev +
                                     ds.stats[static_cast<std::size_t>(j)].mean;
    }
    raw.labels = ds.labels;
    raw.meta = ds.meta;
    return raw;
}

/// Re-normalizes an assembled dataset for a new train/test split.
inline MaskedDataset reassemble(const MaskedDataset& ds, std::vector<index_t> train_rows,
                                std::vector<index_t> test_rows, std::uint64_t seed) {
    return assemble(denormalize(ds), std::move(train_rows), std::move(test_rows), seed);
}

namespace detail {

/// Exact-count random mask with at least one observed entry per row and
/// column: a shuffled transversal skeleton (max(m, n) cells, rows and columns
/// cycled through in random order) plus a uniform fill of the remainder.
/// Rejection sampling would stall near the feasibility boundary.
inline Tensor sample_covered_mask(index_t m, index_t n, index_t count, Rng& rng,
                                  const char* who) {
    if (count < std::max(m, n) || count > m * n)
        throw parameter_error(std::string(who) + ": cannot cover every row and column with " +
                              std::to_string(count) + " observed entries");
    std::vector<index_t> rows(static_cast<std::size_t>(m)), cols(static_cast<std::size_t>(n));
    for (index_t i = 0; i < m; ++i) rows[static_cast<std::size_t>(i)] = i;
    for (index_t j = 0; j < n; ++j) cols[static_cast<std::size_t>(j)] = j;
    rng.shuffle(rows);
    rng.shuffle(cols);
    Tensor mask(m, n);
    for (index_t k = 0; k < std::max(m, n); ++k) {
        const index_t i = rows[static_cast<std::size_t>(k % m)];
        const index_t j = cols[static_cast<std::size_t>(k % n)];
        mask(i, j) = 1.0;
    }
    std::vector<index_t> rest;
    for (index_t k = 0; k < m * n; ++k)
        if (mask[k] == 0.0) rest.push_back(k);
    rng.shuffle(rest);
    for (index_t placed = std::max(m, n); placed < count; ++placed)
        mask[rest[static_cast<std::size_t>(placed - std::max(m, n))]] = 1.0;
    return mask;
}

}  // namespace detail

/// Everything the generator knows that the dataset hides: the full noisy
/// feature matrix, the sampled observation mask, all labels, and the latent
/// class probabilities.
struct SynthTruth {
    Tensor y;
    Tensor mask;
    std::vector<int> labels;
    std::vector<double> probs;
};

struct SynthInstance {
    MaskedDataset ds;
    SynthTruth truth;
};

/// Seeded low-rank instance: Y = U V^T + sigma * noise, labels drawn from
/// sigmoid(label_signal * U w) so label structure lives in the latent
/// factors, ages carry a label effect so the similarity graph is informative.
inline SynthInstance synth_instance(index_t m, index_t n, index_t r, double sigma,
                                    double observed_frac, double label_signal,
                                    std::uint64_t seed) {
    const char* who = "data: synth_instance";
    if (m < 1 || n < 1) throw parameter_error(std::string(who) + ": empty shape");
    if (r < 1 || r > std::min(m, n))
        throw parameter_error(std::string(who) + ": rank out of range");
    if (!(observed_frac > 0.0) || observed_frac > 1.0)
        throw parameter_error(std::string(who) + ": observed_frac must be in (0, 1]");
    if (!(sigma >= 0.0)) throw parameter_error(std::string(who) + ": negative noise");
    if (!std::isfinite(label_signal))
        throw parameter_error(std::string(who) + ": non-finite label signal");

    Rng rng(seed);
    Tensor u = Tensor::randn(m, r, rng);
    Tensor v = Tensor::randn(n, r, rng);
    Tensor y = matmul_nt(u, v);
    if (sigma > 0.0) {
        Tensor noise = Tensor::randn(m, n, rng);
        y = y + sigma * noise;
    }
    Tensor w = Tensor::randn(r, 1, rng);
    Tensor score = matmul(u, w);

    SynthTruth truth;
    truth.y = y;
    truth.labels.resize(static_cast<std::size_t>(m));
    truth.probs.resize(static_cast<std::size_t>(m));
    RawTable raw;
    raw.labels.resize(static_cast<std::size_t>(m));
    raw.meta.resize(static_cast<std::size_t>(m));
    for (index_t i = 0; i < m; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-label_signal * score(i, 0)));
        const int label = rng.bernoulli(p) ? 1 : 0;
        truth.probs[static_cast<std::size_t>(i)] = p;
        truth.labels[static_cast<std::size_t>(i)] = label;
        raw.labels[static_cast<std::size_t>(i)] = label;
        raw.meta[static_cast<std::size_t>(i)].age = 70.0 + 5.0 * label + 3.0 * rng.normal();
        raw.meta[static_cast<std::size_t>(i)].gender = rng.bernoulli(0.5) ? 1 : 0;
    }

    const auto count = static_cast<index_t>(std::llround(observed_frac * double(m * n)));
    Tensor mask = detail::sample_covered_mask(m, n, count, rng, who);
    raw.features = hadamard(y, mask);
    raw.feature_mask = mask;
    truth.mask = std::move(mask);
    for (index_t k = 0; k < n; ++k) raw.feature_names.push_back("f" + std::to_string(k));

    std::vector<index_t> all(static_cast<std::size_t>(m));
    for (index_t i = 0; i < m; ++i) all[static_cast<std::size_t>(i)] = i;
    return SynthInstance{assemble(raw, std::move(all), {}, seed), std::move(truth)};
}

/// Keeps an exact-count uniform subset of the observed feature entries
/// (labels untouched). Cell priorities depend only on (seed, cell), so for a
/// fixed seed the kept set at a smaller keep_frac is a subset of the kept set
/// at a larger one: chained ablation masks are nested by construction.
inline MaskedDataset dropout_features(const MaskedDataset& ds, double keep_frac,
                                      std::uint64_t seed) {
    const char* who = "data: dropout_features";
    if (!(keep_frac > 0.0) || keep_frac > 1.0)
        throw parameter_error(std::string(who) + ": keep_frac must be in (0, 1]");
    struct Cell {
        std::uint64_t priority;
        index_t idx;
    };
    std::vector<Cell> observed;
    for (index_t k = 0; k < ds.omega_a.size(); ++k) {
        if (ds.omega_a[k] == 0.0) continue;
        std::uint64_t state =
            seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(k) + 1);
        observed.push_back({splitmix64(state), k});
    }
    const auto keep =
        static_cast<std::size_t>(std::llround(keep_frac * double(observed.size())));
    std::sort(observed.begin(), observed.end(), [](const Cell& a, const Cell& b) {
        return a.priority != b.priority ? a.priority < b.priority : a.idx < b.idx;
    });

    MaskedDataset out = ds;
    const index_t n = ds.features();
    for (std::size_t t = keep; t < observed.size(); ++t) {
        const index_t k = observed[t].idx;
        out.omega_a[k] = 0.0;
        out.z(k / n, k % n) = 0.0;
    }
    return out;
}

/// Snapshot: `<base>_values.csv`, `<base>_mask.csv`, `<base>_meta.json`.
/// Text is canonical (%.17g, sorted JSON keys), so equal datasets produce
/// byte-identical files and the read side restores them bitwise.
inline void write_snapshot(const MaskedDataset& ds, const std::string& base) {
    const index_t m = ds.rows(), n = ds.features(), c = ds.label_cols();
    std::vector<std::string> header;
    for (const ColumnStats& st : ds.stats) header.push_back(st.name);
    for (index_t k = 0; k < c; ++k) header.push_back("label" + std::to_string(k));

    std::vector<std::vector<std::string>> values, mask;
    for (index_t i = 0; i < m; ++i) {
        std::vector<std::string> vrow, mrow;
        for (index_t j = 0; j < n + c; ++j) vrow.push_back(fmt_g17(ds.z(i, j)));
        for (index_t j = 0; j < n; ++j) mrow.push_back(ds.omega_a(i, j) != 0.0 ? "1" : "0");
        for (index_t j = 0; j < c; ++j) mrow.push_back(ds.omega_b(i, j) != 0.0 ? "1" : "0");
        values.push_back(std::move(vrow));
        mask.push_back(std::move(mrow));
    }
    write_csv_file(base + "_values.csv", header, values);
    write_csv_file(base + "_mask.csv", header, mask);

    nlohmann::json j;
    j["rows"] = m;
    j["features"] = n;
    j["label_cols"] = c;
    j["seed"] = ds.seed;
    j["dropped"] = ds.dropped;
    nlohmann::json stats = nlohmann::json::array();
    for (const ColumnStats& st : ds.stats)
        stats.push_back({{"name", st.name}, {"mean", st.mean}, {"stdev", st.stdev}});
    j["stats"] = std::move(stats);
    std::vector<double> ages;
    std::vector<int> genders;
    for (const NodeMeta& nm : ds.meta) {
        ages.push_back(nm.age);
        genders.push_back(nm.gender);
    }
    j["age"] = std::move(ages);
    j["gender"] = std::move(genders);
    j["labels"] = ds.labels;
    j["train_rows"] = ds.train_rows;
    j["test_rows"] = ds.test_rows;
    std::ofstream out(base + "_meta.json", std::ios::binary);
    if (!out) throw io_error("data: write_snapshot: cannot open '" + base + "_meta.json'");
    out << j.dump(2) << '\n';
    if (!out) throw io_error("data: write_snapshot: write failed for '" + base + "'");
}

inline MaskedDataset read_snapshot(const std::string& base) {
    const char* who = "data: read_snapshot";
    std::ifstream meta_in(base + "_meta.json");
    if (!meta_in) throw io_error(std::string(who) + ": cannot open '" + base + "_meta.json'");
    nlohmann::json j;
    try {
        meta_in >> j;
    } catch (const std::exception& e) {
        throw parse_error(std::string(who) + ": bad metadata: " + e.what());
    }

    MaskedDataset ds;
    const auto m = j.at("rows").get<index_t>();
    const auto n = j.at("features").get<index_t>();
    const auto c = j.at("label_cols").get<index_t>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.dropped = j.at("dropped").get<std::vector<std::string>>();
    for (const auto& st : j.at("stats"))
        ds.stats.push_back({st.at("name").get<std::string>(), st.at("mean").get<double>(),
                            st.at("stdev").get<double>()});
    const auto ages = j.at("age").get<std::vector<double>>();
    const auto genders = j.at("gender").get<std::vector<int>>();
    if (ages.size() != static_cast<std::size_t>(m) || genders.size() != ages.size())
        throw schema_error(std::string(who) + ": metadata row count mismatch");
    for (std::size_t i = 0; i < ages.size(); ++i) ds.meta.push_back({ages[i], genders[i]});
    ds.labels = j.at("labels").get<std::vector<int>>();
    ds.train_rows = j.at("train_rows").get<std::vector<index_t>>();
    ds.test_rows = j.at("test_rows").get<std::vector<index_t>>();
    if (ds.labels.size() != static_cast<std::size_t>(m) ||
        ds.stats.size() != static_cast<std::size_t>(n))
        throw schema_error(std::string(who) + ": metadata shape mismatch");

    CsvTable values = read_csv_file(base + "_values.csv");
    CsvTable mask = read_csv_file(base + "_mask.csv");
    if (values.rows.size() != static_cast<std::size_t>(m) ||
        mask.rows.size() != static_cast<std::size_t>(m) ||
        values.header.size() != static_cast<std::size_t>(n + c) ||
        mask.header.size() != static_cast<std::size_t>(n + c))
        throw schema_error(std::string(who) + ": csv shape mismatch");
    ds.z = Tensor(m, n + c);
    ds.omega_a = Tensor(m, n);
    ds.omega_b = Tensor(m, c);
    for (index_t i = 0; i < m; ++i) {
        for (index_t j2 = 0; j2 < n + c; ++j2) {
            const std::string where = std::string(who) + ": row " + std::to_string(i + 1) +
                                      ", column '" + values.header[static_cast<std::size_t>(j2)] +
                                      "'";
            ds.z(i, j2) =
                parse_number(values.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j2)],
                             where);
            const double mv =
                parse_number(mask.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j2)],
                             where);
            if (mv != 0.0 && mv != 1.0)
                throw validation_error(where + ": mask entries must be 0 or 1");
            if (j2 < n)
                ds.omega_a(i, j2) = mv;
            else
                ds.omega_b(i, j2 - n) = mv;
        }
    }
    return ds;
}

}  // namespace gmc
