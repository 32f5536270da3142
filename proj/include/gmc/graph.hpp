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
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "gmc/autodiff.hpp"
#include "gmc/errors.hpp"
#include "gmc/exact.hpp"
#include "gmc/sparse.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

/// Weighted undirected graph over dataset rows (or columns). The adjacency is
/// kept dense and exactly symmetric; the edge list mirrors its upper triangle.
struct PopulationGraph {
    index_t m = 0;
    Tensor adjacency;  // m x m, symmetric, zero diagonal, weights >= 0

    struct Edge {
        index_t u, v;  // u < v
        double w;
    };
    std::vector<Edge> edges;

    static PopulationGraph from_adjacency(Tensor a) {
        if (a.rows() != a.cols()) throw dimension_error("graph: adjacency not square");
        PopulationGraph g;
        g.m = a.rows();
        for (index_t i = 0; i < g.m; ++i) {
            if (a(i, i) != 0.0) throw validation_error("graph: adjacency diagonal must be zero");
            for (index_t j = i + 1; j < g.m; ++j) {
                if (a(i, j) != a(j, i)) throw validation_error("graph: adjacency not symmetric");
                if (a(i, j) < 0.0) throw validation_error("graph: negative edge weight");
                if (a(i, j) != 0.0) g.edges.push_back({i, j, a(i, j)});
            }
        }
        g.adjacency = std::move(a);
        return g;
    }
};

/// Laplacian operators of one graph: combinatorial L = D - A, symmetric
/// normalized L_norm = I - D^{-1/2} A D^{-1/2}, and the spectral rescale
/// scaled = 2 L_norm / lambda_max - I used by Chebyshev filters. Sparse forms
/// are kept alongside for the model's operator products.
struct LaplacianSet {
    Tensor lap;
    Tensor lap_norm;
    Tensor scaled;
    double lambda_max = 2.0;
    std::shared_ptr<const CsrSym> lap_csr;
    std::shared_ptr<const CsrSym> norm_csr;
    std::shared_ptr<const CsrSym> scaled_csr;

    /// For callers that only need the Chebyshev operator (tests, mostly).
    static LaplacianSet from_scaled(Tensor s) {
        LaplacianSet l;
        l.scaled_csr = std::make_shared<const CsrSym>(CsrSym::from_dense(s));
        l.scaled = std::move(s);
        return l;
    }
};

/// k-nearest-neighbor graph on a scalar covariate, unit weights, symmetrized
/// by union. Neighbor ties break toward the lower node index.
inline PopulationGraph knn_graph(const std::vector<double>& covariate, index_t k) {
    const index_t m = index_t(covariate.size());
    if (k <= 0 || k >= m) throw parameter_error("graph: knn_graph: need 0 < k < node count");
    for (double v : covariate)
        if (!std::isfinite(v)) throw validation_error("graph: knn_graph: non-finite covariate");
    Tensor a(m, m);
    std::vector<std::pair<double, index_t>> dist;
    dist.reserve(std::size_t(m) - 1);
    for (index_t i = 0; i < m; ++i) {
        dist.clear();
        for (index_t j = 0; j < m; ++j)
            if (j != i) dist.push_back({std::abs(covariate[std::size_t(i)] - covariate[std::size_t(j)]), j});
        std::sort(dist.begin(), dist.end());  // (distance, index): ties pick lower index
        for (index_t t = 0; t < k; ++t) {
            const index_t j = dist[std::size_t(t)].second;
            a(i, j) = 1.0;
            a(j, i) = 1.0;
        }
    }
    return PopulationGraph::from_adjacency(std::move(a));
}

struct NodeMeta {
    double age = 0.0;
    int gender = 0;
};

/// Phenotype similarity graph: one weight unit for matching gender, one for
/// ages within the threshold. Pairs scoring zero get no edge.
inline PopulationGraph similarity_graph(const std::vector<NodeMeta>& meta, double age_threshold) {
    if (age_threshold < 0.0) throw parameter_error("graph: similarity_graph: negative age threshold");
    const index_t m = index_t(meta.size());
    if (m < 2) throw parameter_error("graph: similarity_graph: need at least 2 nodes");
    for (const NodeMeta& r : meta)
        if (!std::isfinite(r.age)) throw validation_error("graph: similarity_graph: non-finite age");
    Tensor a(m, m);
    for (index_t i = 0; i < m; ++i)
        for (index_t j = i + 1; j < m; ++j) {
            double w = 0.0;
            if (meta[std::size_t(i)].gender == meta[std::size_t(j)].gender) w += 1.0;
            if (std::abs(meta[std::size_t(i)].age - meta[std::size_t(j)].age) <= age_threshold) w += 1.0;
            a(i, j) = w;
            a(j, i) = w;
        }
    return PopulationGraph::from_adjacency(std::move(a));
}

namespace detail {

/// One power-iteration run. Converges when the eigenpair residual
/// ||Sv - lambda v|| drops below tol (a Rayleigh plateau alone would accept
/// sub-dominant plateaus while the dominant component is still growing).
/// Returns the converged eigenvalue, or falls out after max_iters.
inline bool power_run(const Tensor& s, Tensor v, double tol, int max_iters, double& out) {
    const index_t n = s.rows();
    const double nv = v.frob();
    if (nv < 1e-300) return false;
    for (index_t i = 0; i < n; ++i) v(i, 0) /= nv;
    for (int it = 0; it < max_iters; ++it) {
        Tensor w = matmul(s, v);
        const double lambda = dot_all(v, w);  // Rayleigh quotient, ||v|| = 1
        ExactAcc res;
        for (index_t i = 0; i < n; ++i) {
            const double r = w(i, 0) - lambda * v(i, 0);
            res.add(r * r);
        }
        if (std::sqrt(res.value()) <= tol * std::max(1.0, std::abs(lambda))) {
            out = lambda;
            return true;
        }
        const double nw = w.frob();
        if (nw < 1e-300) return false;
        for (index_t i = 0; i < n; ++i) v(i, 0) = w(i, 0) / nw;
    }
    return false;
}

/// Spectral-radius overestimate for a symmetric PSD matrix via normalized
/// repeated squaring: tr(S^(2^K))^(1/2^K) lies in [lambda_max,
/// lambda_max * n^(1/2^K)]. Every reduction is exact, so the value is bitwise
/// invariant under joint permutation of the operator, and unlike an iterative
/// eigensolve it sees antisymmetric eigenspaces that equivariant start
/// vectors cannot reach.
inline double trace_spectral_bound(const Tensor& s, int squarings = 16) {
    const index_t n = s.rows();
    Tensor b = s;
    double log_lambda = 0.0;
    double weight = 1.0;  // 2^-i for squaring step i
    for (int i = 0; i < squarings; ++i) {
        const double f = b.frob();
        if (!(f > 0.0)) return 0.0;
        log_lambda += weight * std::log(f);
        weight *= 0.5;
        for (index_t k = 0; k < b.size(); ++k) b[k] /= f;
        b = matmul(b, b);
    }
    ExactAcc tr;
    for (index_t i = 0; i < n; ++i) tr.add(b(i, i));
    const double t = tr.value();
    if (!(t > 0.0)) return 0.0;
    log_lambda += weight * std::log(t);
    return std::exp(log_lambda);
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration. Start
/// vectors are built from node degrees so they are equivariant under node
/// relabeling; with exact reductions the estimate is then bitwise invariant
/// under joint permutation of the operator. Deterministic equivariant starts
/// can sit exactly inside an invariant subspace (nullspace on regular graphs,
/// automorphism-symmetric subspaces), so a converged eigenvalue counts only
/// when it reaches the trace-squaring certificate; anything lower is a
/// sub-dominant eigenpair. With no certified run the fallback is returned;
/// for normalized Laplacians the fallback 2.0 is a valid upper bound, and
/// only an overestimate keeps the scaled spectrum inside [-1,1].
inline double power_lambda_max(const Tensor& s, double fallback, double tol = 1e-8,
                               int max_iters = 1000) {
    const index_t n = s.rows();
    if (n == 0) return fallback;

    std::vector<double> rowsum(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        ExactAcc acc;
        for (index_t j = 0; j < n; ++j)
            if (j != i) acc.add(std::abs(s(i, j)));
        rowsum[std::size_t(i)] = acc.value();
    }
    const double mean = exact_sum(rowsum.data(), rowsum.size()) / double(n);

    std::vector<Tensor> starts;
    Tensor s1(n, 1);
    for (index_t i = 0; i < n; ++i) s1(i, 0) = 1.0 + rowsum[std::size_t(i)];
    starts.push_back(s1);
    Tensor s2(n, 1);
    for (index_t i = 0; i < n; ++i) s2(i, 0) = rowsum[std::size_t(i)] - mean;
    starts.push_back(std::move(s2));
    // s1 with its projection onto the degree direction removed; escapes the
    // nullspace of a normalized Laplacian when s1 happens to land in it.
    Tensor q(n, 1);
    for (index_t i = 0; i < n; ++i) q(i, 0) = std::sqrt(std::max(rowsum[std::size_t(i)], 0.0));
    const double qq = q.frob_sq();
    if (qq > 0.0) {
        const double c = dot_all(s1, q) / qq;
        Tensor s3(n, 1);
        for (index_t i = 0; i < n; ++i) s3(i, 0) = s1(i, 0) - c * q(i, 0);
        starts.push_back(std::move(s3));
    }

    const int squarings = 16;
    const double certificate = trace_spectral_bound(s, squarings);
    // certificate <= lambda_max * slack; accept runs within the slack band.
    const double slack = std::pow(double(std::max<index_t>(n, 2)), std::ldexp(1.0, -squarings));
    const double threshold = certificate / slack * (1.0 - 1e-9);

    bool any = false;
    double best = 0.0;
    for (const Tensor& v : starts) {
        double lambda = 0.0;
        if (power_run(s, v, tol, max_iters, lambda) && lambda >= threshold) {
            any = true;
            best = std::max(best, lambda);
        }
    }
    return any ? best : fallback;
}

}  // namespace detail

/// All Laplacian operators of a graph. Degrees are exact row sums; an isolated
/// node's normalized-Laplacian row is the identity row.
inline LaplacianSet laplacians(const PopulationGraph& g) {
    const index_t m = g.m;
    const Tensor& a = g.adjacency;
    for (index_t i = 0; i < m; ++i)
        for (index_t j = 0; j < m; ++j)
            if (a(i, j) < 0.0) throw validation_error("graph: laplacians: negative edge weight");

    std::vector<double> deg(static_cast<std::size_t>(m));
    for (index_t i = 0; i < m; ++i) deg[std::size_t(i)] = exact_sum(a.row(i), std::size_t(m));

    LaplacianSet out;
    out.lap = Tensor(m, m);
    for (index_t i = 0; i < m; ++i) {
        for (index_t j = 0; j < m; ++j) out.lap(i, j) = -a(i, j);
        out.lap(i, i) = deg[std::size_t(i)];
    }

    std::vector<double> dinv_sqrt(static_cast<std::size_t>(m));
    for (index_t i = 0; i < m; ++i)
        dinv_sqrt[std::size_t(i)] = deg[std::size_t(i)] > 0.0 ? 1.0 / std::sqrt(deg[std::size_t(i)]) : 0.0;
    out.lap_norm = Tensor(m, m);
    for (index_t i = 0; i < m; ++i) {
        out.lap_norm(i, i) = 1.0;
        for (index_t j = i + 1; j < m; ++j) {
            // One evaluation per pair keeps the matrix symmetric to the bit.
            const double v = -a(i, j) * (dinv_sqrt[std::size_t(i)] * dinv_sqrt[std::size_t(j)]);
            out.lap_norm(i, j) = v;
            out.lap_norm(j, i) = v;
        }
    }

    out.lambda_max = detail::power_lambda_max(out.lap_norm, 2.0);

    const double scale = 2.0 / out.lambda_max;
    out.scaled = Tensor(m, m);
    for (index_t i = 0; i < m; ++i) {
        for (index_t j = 0; j < m; ++j) out.scaled(i, j) = scale * out.lap_norm(i, j);
        out.scaled(i, i) = scale * out.lap_norm(i, i) - 1.0;
    }

    out.lap_csr = std::make_shared<const CsrSym>(CsrSym::from_dense(out.lap, 0.0));
    out.norm_csr = std::make_shared<const CsrSym>(CsrSym::from_dense(out.lap_norm, 0.0));
    out.scaled_csr = std::make_shared<const CsrSym>(CsrSym::from_dense(out.scaled, 0.0));
    return out;
}

/// Chebyshev basis stack: T_0 = x, T_1 = S x, T_k = 2 S T_{k-1} - T_{k-2}
/// where S is the scaled Laplacian. Plain-tensor form.
inline std::vector<Tensor> chebyshev_stack(const LaplacianSet& lap, const Tensor& x, index_t order) {
    if (order < 0) throw parameter_error("graph: chebyshev_stack: negative order");
    if (!lap.scaled_csr) throw parameter_error("graph: chebyshev_stack: missing scaled operator");
    if (x.rows() != lap.scaled_csr->n)
        throw dimension_error("graph: chebyshev_stack: input rows do not match operator");
    std::vector<Tensor> t;
    t.reserve(std::size_t(order) + 1);
    t.push_back(x);
    if (order >= 1) t.push_back(lap.scaled_csr->mul(x));
    for (index_t k = 2; k <= order; ++k) {
        Tensor next = lap.scaled_csr->mul(t[std::size_t(k) - 1]);
        const Tensor& prev = t[std::size_t(k) - 2];
        for (index_t q = 0; q < next.size(); ++q) next[q] = 2.0 * next[q] - prev[q];
        t.push_back(std::move(next));
    }
    return t;
}

/// Differentiable form of the same recurrence, registered on the tape.
inline std::vector<ad::Val> chebyshev_stack(ad::Tape& tape, const LaplacianSet& lap, ad::Val x,
                                            index_t order) {
    if (order < 0) throw parameter_error("graph: chebyshev_stack: negative order");
    if (!lap.scaled_csr) throw parameter_error("graph: chebyshev_stack: missing scaled operator");
    std::vector<ad::Val> t;
    t.reserve(std::size_t(order) + 1);
    t.push_back(x);
    if (order >= 1) t.push_back(tape.spmm(lap.scaled_csr, x));
    for (index_t k = 2; k <= order; ++k)
        t.push_back(tape.sub(tape.scale(tape.spmm(lap.scaled_csr, t[std::size_t(k) - 1]), 2.0),
                             t[std::size_t(k) - 2]));
    return t;
}

/// Edge list as `u,v,weight` lines, 0-based, upper triangle in row order.
inline std::string edge_list_text(const PopulationGraph& g) {
    std::string out;
    char buf[64];
    for (const PopulationGraph::Edge& e : g.edges) {
        std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g\n", static_cast<long long>(e.u),
                      static_cast<long long>(e.v), e.w);
        out += buf;
    }
    return out;
}

}  // namespace gmc
