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
#include <memory>
#include <string>
#include <vector>

#include "gmc/errors.hpp"
#include "gmc/exact.hpp"
#include "gmc/sparse.hpp"
#include "gmc/tensor.hpp"

namespace gmc::ad {

// Tape-based reverse mode over dense matrices. Every op appends a node holding
// its forward value; backward() walks the tape once in reverse creation order,
// so gradient accumulation order is a function of graph construction order
// alone and reruns are bit-identical.

enum class Op {
    kLeaf,
    kMatmul,     // A * B
    kMatmulNT,   // A * B^T
    kAdd,
    kSub,
    kHadamard,
    kScale,      // alpha * A
    kSigmoid,
    kTanh,
    kAddRowvec,  // A + 1 b  (row vector broadcast over rows)
    kFrobSq,     // sum of squares -> 1x1
    kDirichlet,  // tr(X^T L X) -> 1x1, L constant symmetric
    kMaskedBce,  // mean BCE-with-logits over mask -> 1x1
    kSpmm,       // S * X, S constant sparse symmetric
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid for the lifetime of the tape.
struct Val {
    int id = -1;
};

struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    int c = -1;
    double alpha = 0.0;
    bool constant = false;  // constants take no gradient and stop backward traversal
    Tensor value;
    Tensor grad;
    Tensor aux;  // op-specific forward byproduct reused in backward
    std::shared_ptr<const CsrSym> sp;
};

class Tape {
  public:
    /// Differentiable leaf.
    Val var(Tensor v) { return push_leaf(std::move(v), false); }

    /// Non-differentiable leaf (data, masks, fixed operators).
    Val constant(Tensor v) { return push_leaf(std::move(v), true); }

    const Tensor& value(Val x) const { return at(x, "value").value; }

    /// Gradient of the last backward() target w.r.t. x. Zero tensor if the
    /// node is constant or unreached.
    const Tensor& grad(Val x) const { return at(x, "grad").grad; }

    std::size_t size() const { return nodes_.size(); }

    Val matmul(Val a, Val b) {
        const Node& na = at(a, "matmul");
        const Node& nb = at(b, "matmul");
        if (na.value.cols() != nb.value.rows())
            throw dimension_error("autodiff: matmul: inner dimensions disagree");
        return push(Op::kMatmul, a, b, gmc::matmul(na.value, nb.value), "matmul");
    }

    Val matmul_nt(Val a, Val b) {
        const Node& na = at(a, "matmul_nt");
        const Node& nb = at(b, "matmul_nt");
        if (na.value.cols() != nb.value.cols())
            throw dimension_error("autodiff: matmul_nt: column counts disagree");
        return push(Op::kMatmulNT, a, b, gmc::matmul_nt(na.value, nb.value), "matmul_nt");
    }

    Val add(Val a, Val b) {
        check_same(a, b, "add");
        return push(Op::kAdd, a, b, value(a) + value(b), "add");
    }

    Val sub(Val a, Val b) {
        check_same(a, b, "sub");
        return push(Op::kSub, a, b, value(a) - value(b), "sub");
    }

    Val hadamard(Val a, Val b) {
        check_same(a, b, "hadamard");
        return push(Op::kHadamard, a, b, gmc::hadamard(value(a), value(b)), "hadamard");
    }

    Val scale(Val a, double alpha) {
        Val r = push(Op::kScale, a, Val{}, alpha * value(a), "scale");
        nodes_[std::size_t(r.id)].alpha = alpha;
        return r;
    }

    Val sigmoid(Val a) {
        const Tensor& x = value(a);
        Tensor y(x.rows(), x.cols());
        for (index_t k = 0; k < x.size(); ++k) {
            const double v = x[k];
            // Evaluate from the non-overflowing side.
            y[k] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                            : std::exp(v) / (1.0 + std::exp(v));
        }
        return push(Op::kSigmoid, a, Val{}, std::move(y), "sigmoid");
    }

    Val tanh(Val a) {
        const Tensor& x = value(a);
        Tensor y(x.rows(), x.cols());
        for (index_t k = 0; k < x.size(); ++k) y[k] = std::tanh(x[k]);
        return push(Op::kTanh, a, Val{}, std::move(y), "tanh");
    }

    /// a: m x k, bias: 1 x k; adds the bias row to every row of a.
    Val add_rowvec(Val a, Val bias) {
        const Tensor& x = value(a);
        const Tensor& r = value(bias);
        if (r.rows() != 1 || r.cols() != x.cols())
            throw dimension_error("autodiff: add_rowvec: bias must be 1 x cols(a)");
        Tensor y(x.rows(), x.cols());
        for (index_t i = 0; i < x.rows(); ++i)
            for (index_t j = 0; j < x.cols(); ++j) y(i, j) = x(i, j) + r(0, j);
        return push(Op::kAddRowvec, a, bias, std::move(y), "add_rowvec");
    }

    /// Sum of squared entries, as a 1x1 tensor.
    Val frobenius_sq(Val a) {
        Tensor y(1, 1);
        y(0, 0) = value(a).frob_sq();
        return push(Op::kFrobSq, a, Val{}, std::move(y), "frobenius_sq");
    }

    /// tr(X^T L X) for a constant symmetric L. Validates symmetry because the
    /// backward rule 2 L X assumes it.
    Val dirichlet(const Tensor& lap, Val x) {
        const Tensor& xv = value(x);
        if (lap.rows() != lap.cols())
            throw dimension_error("autodiff: dirichlet: operator not square");
        if (lap.rows() != xv.rows())
            throw dimension_error("autodiff: dirichlet: operator/input row mismatch");
        for (index_t i = 0; i < lap.rows(); ++i)
            for (index_t j = i + 1; j < lap.cols(); ++j)
                if (std::abs(lap(i, j) - lap(j, i)) > 1e-9)
                    throw validation_error("autodiff: dirichlet: operator not symmetric");
        Tensor lx = gmc::matmul(lap, xv);
        Tensor y(1, 1);
        y(0, 0) = dot_all(xv, lx);
        Val r = push(Op::kDirichlet, x, Val{}, std::move(y), "dirichlet");
        nodes_[std::size_t(r.id)].aux = std::move(lx);
        return r;
    }

    /// Same contraction with the operator held in sparse form.
    Val dirichlet(std::shared_ptr<const CsrSym> lap, Val x) {
        const Tensor& xv = value(x);
        if (!lap) throw parameter_error("autodiff: dirichlet: null operator");
        if (lap->n != xv.rows())
            throw dimension_error("autodiff: dirichlet: operator/input row mismatch");
        Tensor lx = lap->mul(xv);
        Tensor y(1, 1);
        y(0, 0) = dot_all(xv, lx);
        Val r = push(Op::kDirichlet, x, Val{}, std::move(y), "dirichlet");
        nodes_[std::size_t(r.id)].aux = std::move(lx);
        return r;
    }

    /// Mean binary cross-entropy with logits over the entries where mask is 1.
    /// logits is differentiable; targets and mask are plain tensors.
    Val masked_bce(Val logits, const Tensor& targets, const Tensor& mask) {
        const Tensor& z = value(logits);
        check_same_shape(z, targets, "autodiff: masked_bce");
        check_same_shape(z, mask, "autodiff: masked_bce");
        double cnt = 0.0;
        for (index_t k = 0; k < mask.size(); ++k) {
            if (mask[k] != 0.0 && mask[k] != 1.0)
                throw validation_error("autodiff: masked_bce: mask entries must be 0 or 1");
            cnt += mask[k];
        }
        if (cnt == 0.0) throw validation_error("autodiff: masked_bce: empty mask");
        ExactAcc acc;
        for (index_t k = 0; k < z.size(); ++k) {
            if (mask[k] == 0.0) continue;
            const double zz = z[k];
            const double t = targets[k];
            // max(z,0) - z*t + log(1+exp(-|z|)), stable for large |z|.
            acc.add(std::max(zz, 0.0) - zz * t + std::log1p(std::exp(-std::abs(zz))));
        }
        Tensor y(1, 1);
        y(0, 0) = acc.value() / cnt;
        // d/dz of the mean is (sigmoid(z) - t) / cnt on masked entries.
        // Computed before push(): node storage may move on append.
        Tensor dz(z.rows(), z.cols());
        for (index_t k = 0; k < z.size(); ++k) {
            if (mask[k] == 0.0) continue;
            const double v = z[k];
            const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v));
            dz[k] = (s - targets[k]) / cnt;
        }
        Val r = push(Op::kMaskedBce, logits, Val{}, std::move(y), "masked_bce");
        nodes_[std::size_t(r.id)].aux = std::move(dz);
        return r;
    }

    /// S * X for a constant sparse symmetric S.
    Val spmm(std::shared_ptr<const CsrSym> s, Val x) {
        if (!s) throw parameter_error("autodiff: spmm: null operator");
        const Tensor& xv = value(x);
        if (s->n != xv.rows()) throw dimension_error("autodiff: spmm: row count mismatch");
        Val r = push(Op::kSpmm, x, Val{}, s->mul(xv), "spmm");
        nodes_[std::size_t(r.id)].sp = std::move(s);
        return r;
    }

    /// Reverse pass from a scalar node. Grads of all non-constant nodes are
    /// zeroed first, so repeated calls do not accumulate across passes.
    void backward(Val loss) {
        Node& top = at_mut(loss, "backward");
        if (top.value.rows() != 1 || top.value.cols() != 1)
            throw dimension_error("autodiff: backward: target must be 1x1");
        for (Node& n : nodes_) {
            if (n.constant) continue;
            n.grad = Tensor(n.value.rows(), n.value.cols());
        }
        if (top.constant)
            throw validation_error("autodiff: backward: target is constant");
        top.grad(0, 0) = 1.0;
        for (int id = loss.id; id >= 0; --id) {
            const Node& n = nodes_[std::size_t(id)];
            if (n.constant || n.op == Op::kLeaf) continue;
            pull(n);
        }
    }

  private:
    std::vector<Node> nodes_;

    Val push_leaf(Tensor v, bool constant) {
        if (!v.all_finite()) throw numerical_error("autodiff: leaf: non-finite input");
        Node n;
        n.op = Op::kLeaf;
        n.constant = constant;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return Val{int(nodes_.size()) - 1};
    }

    Val push(Op op, Val a, Val b, Tensor value, const char* name) {
        if (!value.all_finite())
            throw numerical_error(std::string("autodiff: ") + name + ": non-finite result");
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = b.id;
        n.constant = propagates_nothing(a) && propagates_nothing(b);
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Val{int(nodes_.size()) - 1};
    }

    bool propagates_nothing(Val v) const {
        return v.id < 0 || nodes_[std::size_t(v.id)].constant;
    }

    const Node& at(Val x, const char* who) const {
        if (x.id < 0 || std::size_t(x.id) >= nodes_.size())
            throw parameter_error(std::string("autodiff: ") + who + ": invalid node handle");
        return nodes_[std::size_t(x.id)];
    }

    Node& at_mut(Val x, const char* who) {
        return const_cast<Node&>(at(x, who));
    }

    void check_same(Val a, Val b, const char* who) {
        check_same_shape(at(a, who).value, at(b, who).value,
                         (std::string("autodiff: ") + who).c_str());
    }

    void accumulate(int id, const Tensor& contrib) {
        if (id < 0) return;
        Node& p = nodes_[std::size_t(id)];
        if (p.constant) return;
        for (index_t k = 0; k < contrib.size(); ++k) p.grad[k] += contrib[k];
    }

    void pull(const Node& n) {
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::kMatmul: {
                const Tensor& av = nodes_[std::size_t(n.a)].value;
                const Tensor& bv = nodes_[std::size_t(n.b)].value;
                if (!nodes_[std::size_t(n.a)].constant)
                    accumulate(n.a, gmc::matmul_nt(g, bv));
                if (!nodes_[std::size_t(n.b)].constant)
                    accumulate(n.b, gmc::matmul_tn(av, g));
                break;
            }
            case Op::kMatmulNT: {
                const Tensor& av = nodes_[std::size_t(n.a)].value;
                const Tensor& bv = nodes_[std::size_t(n.b)].value;
                if (!nodes_[std::size_t(n.a)].constant)
                    accumulate(n.a, gmc::matmul(g, bv));
                if (!nodes_[std::size_t(n.b)].constant)
                    accumulate(n.b, gmc::matmul_tn(g, av));
                break;
            }
            case Op::kAdd:
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            case Op::kSub:
                accumulate(n.a, g);
                accumulate(n.b, -1.0 * g);
                break;
            case Op::kHadamard:
                accumulate(n.a, gmc::hadamard(g, nodes_[std::size_t(n.b)].value));
                accumulate(n.b, gmc::hadamard(g, nodes_[std::size_t(n.a)].value));
                break;
            case Op::kScale:
                accumulate(n.a, n.alpha * g);
                break;
            case Op::kSigmoid: {
                const Tensor& y = n.value;
                Tensor d(y.rows(), y.cols());
                for (index_t k = 0; k < y.size(); ++k)
                    d[k] = g[k] * y[k] * (1.0 - y[k]);
                accumulate(n.a, d);
                break;
            }
            case Op::kTanh: {
                const Tensor& y = n.value;
                Tensor d(y.rows(), y.cols());
                for (index_t k = 0; k < y.size(); ++k)
                    d[k] = g[k] * (1.0 - y[k] * y[k]);
                accumulate(n.a, d);
                break;
            }
            case Op::kAddRowvec: {
                accumulate(n.a, g);
                if (!nodes_[std::size_t(n.b)].constant) {
                    Tensor cs(1, g.cols());
                    ExactAcc acc;
                    for (index_t j = 0; j < g.cols(); ++j) {
                        acc.reset();
                        for (index_t i = 0; i < g.rows(); ++i) acc.add(g(i, j));
                        cs(0, j) = acc.value();
                    }
                    accumulate(n.b, cs);
                }
                break;
            }
            case Op::kFrobSq: {
                const double s = 2.0 * g(0, 0);
                accumulate(n.a, s * nodes_[std::size_t(n.a)].value);
                break;
            }
            case Op::kDirichlet: {
                // d tr(X^T L X) = (L + L^T) X = 2 L X with symmetric L.
                accumulate(n.a, (2.0 * g(0, 0)) * n.aux);
                break;
            }
            case Op::kMaskedBce:
                accumulate(n.a, g(0, 0) * n.aux);
                break;
            case Op::kSpmm:
                // S symmetric, so the adjoint is S itself.
                accumulate(n.a, n.sp->mul(g));
                break;
            case Op::kLeaf:
                break;
        }
    }
};

}  // namespace gmc::ad
