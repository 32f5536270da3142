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
#include <vector>

#include "gmc/errors.hpp"
#include "gmc/exact.hpp"
#include "gmc/tensor.hpp"

namespace gmc {

/// Compressed sparse rows for a symmetric square matrix. Used for the graph
/// operators applied inside the model, where most rows touch few neighbors.
struct CsrSym {
    index_t n = 0;
    std::vector<index_t> row_ptr;  // size n+1
    std::vector<index_t> col;
    std::vector<double> val;

    static CsrSym from_dense(const Tensor& a, double sym_tol = 1e-9) {
        if (a.rows() != a.cols()) throw dimension_error("sparse: from_dense: matrix not square");
        for (index_t i = 0; i < a.rows(); ++i)
            for (index_t j = i + 1; j < a.cols(); ++j)
                if (std::abs(a(i, j) - a(j, i)) > sym_tol)
                    throw validation_error("sparse: from_dense: matrix not symmetric");
        CsrSym s;
        s.n = a.rows();
        s.row_ptr.assign(std::size_t(s.n) + 1, 0);
        for (index_t i = 0; i < s.n; ++i) {
            s.row_ptr[std::size_t(i)] = index_t(s.col.size());
            for (index_t j = 0; j < s.n; ++j) {
                if (a(i, j) != 0.0) {
                    s.col.push_back(j);
                    s.val.push_back(a(i, j));
                }
            }
        }
        s.row_ptr[std::size_t(s.n)] = index_t(s.col.size());
        return s;
    }

    /// y = S * x (exact accumulation per output entry).
    Tensor mul(const Tensor& x) const {
        if (x.rows() != n) throw dimension_error("sparse: mul: row count mismatch");
        const index_t k = x.cols();
        Tensor y(n, k);
        ExactAcc acc;
        for (index_t i = 0; i < n; ++i) {
            for (index_t j = 0; j < k; ++j) {
                acc.reset();
                for (index_t p = row_ptr[std::size_t(i)]; p < row_ptr[std::size_t(i) + 1]; ++p)
                    acc.add(val[std::size_t(p)] * x(col[std::size_t(p)], j));
                y(i, j) = acc.value();
            }
        }
        return y;
    }
};

}  // namespace gmc
