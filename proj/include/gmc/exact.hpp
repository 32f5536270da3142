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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace gmc {

/// Exact accumulator for IEEE-754 doubles.
///
/// Keeps the running sum as a fixed-point integer spanning the full double
/// range (one 32-bit slice per int64 chunk), so the result is the correctly
/// rounded value of the exact sum and is invariant under any reordering of
/// the addends. Every reduction in this library goes through this type; that
/// is what makes row-permutation equivariance hold bitwise end to end.
class ExactAcc {
public:
    ExactAcc() { reset(); }

    void reset() {
        std::memset(chunk_, 0, sizeof(chunk_));
        pending_ = 0;
        lo_ = kChunks;
        hi_ = -1;
        nonfinite_ = false;
    }

    void add(double v) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        std::uint64_t mant = bits & ((std::uint64_t(1) << 52) - 1);
        const int expo = int((bits >> 52) & 0x7ff);
        if (expo == 0x7ff) {  // inf or nan
            nonfinite_ = true;
            return;
        }
        if (expo == 0) {
            if (mant == 0) return;  // +-0 contributes nothing
        } else {
            mant |= std::uint64_t(1) << 52;
        }
        // bit index of the mantissa LSB on the accumulator grid
        const int lsb = (expo ? expo : 1) + 13;
        const int c = lsb >> 5;
        const int s = lsb & 31;
        const std::uint64_t lo = (mant & 0xffffffffull) << s;  // <= 2^63
        const std::uint64_t hi = (mant >> 32) << s;            // <= 2^52
        const std::int64_t sgn = 1 - 2 * std::int64_t(bits >> 63);
        chunk_[c] += sgn * std::int64_t(lo & 0xffffffffull);
        chunk_[c + 1] += sgn * std::int64_t((lo >> 32) + (hi & 0xffffffffull));
        chunk_[c + 2] += sgn * std::int64_t(hi >> 32);
        if (c < lo_) lo_ = c;
        if (c + 2 > hi_) hi_ = c + 2;
        if (++pending_ >= kPropagateEvery) propagate();
    }

    /// Correctly rounded double of the exact sum (NaN if any addend was non-finite).
    double value() {
        if (nonfinite_) return std::numeric_limits<double>::quiet_NaN();
        propagate();
        if (hi_ < 0) return 0.0;
        bool neg = false;
        if (chunk_[hi_] < 0) {
            neg = true;
            for (int c = lo_; c <= hi_; ++c) chunk_[c] = -chunk_[c];
            propagate();
        }
        int h = hi_;
        while (h >= lo_ && chunk_[h] == 0) --h;
        if (h < lo_) return 0.0;
        const int msb = 63 - std::countl_zero(std::uint64_t(chunk_[h]));
        const int top = 32 * h + msb - kBias;          // exponent of the most significant bit
        const int lsb_pos = std::max(top - 52, -1074);  // denormal cutoff
        const int g = lsb_pos + kBias;
        const int c0 = g >> 5;
        const int s0 = g & 31;
        unsigned __int128 w = std::uint64_t(chunk_[c0]);
        if (c0 + 1 < kChunks) w |= static_cast<unsigned __int128>(std::uint64_t(chunk_[c0 + 1])) << 32;
        if (c0 + 2 < kChunks) w |= static_cast<unsigned __int128>(std::uint64_t(chunk_[c0 + 2])) << 64;
        std::uint64_t m = std::uint64_t(w >> s0) & ((std::uint64_t(1) << 53) - 1);
        // round to nearest, ties to even: guard bit at g-1, sticky below
        bool guard = false, sticky = false;
        if (g > 0) {
            const int gb = g - 1;
            const int cg = gb >> 5;
            guard = (std::uint64_t(chunk_[cg]) >> (gb & 31)) & 1;
            if (std::uint64_t(chunk_[cg]) & ((std::uint64_t(1) << (gb & 31)) - 1)) sticky = true;
            for (int c = lo_; c < cg && !sticky; ++c)
                if (chunk_[c] != 0) sticky = true;
        }
        if (guard && (sticky || (m & 1))) ++m;
        double r = std::ldexp(double(m), lsb_pos);
        if (neg) {
            // restore the accumulator so value() stays repeatable
            for (int c = lo_; c <= hi_; ++c) chunk_[c] = -chunk_[c];
            propagate();
            r = -r;
        }
        return r;
    }

    bool seen_nonfinite() const { return nonfinite_; }

private:
    static constexpr int kChunks = 68;  // grid bits [-kBias, 32*kChunks - kBias)
    static constexpr int kBias = 1088;
    static constexpr int kPropagateEvery = 1 << 28;

    void propagate() {
        pending_ = 0;
        if (hi_ < 0) return;
        const int top = std::min(hi_, kChunks - 2);
        for (int c = lo_; c <= top; ++c) {
            const std::int64_t v = chunk_[c];
            const std::int64_t rem = v & 0xffffffffll;
            chunk_[c] = rem;
            chunk_[c + 1] += (v - rem) >> 32;
        }
        if (top + 1 > hi_) hi_ = top + 1;
    }

    std::int64_t chunk_[kChunks];
    int pending_;
    int lo_, hi_;
    bool nonfinite_;
};

/// Order-invariant sum of a contiguous range.
inline double exact_sum(const double* p, std::size_t n) {
    ExactAcc acc;
    for (std::size_t i = 0; i < n; ++i) acc.add(p[i]);
    return acc.value();
}

/// Order-invariant dot product with strides. The pairwise products are
/// correctly rounded by the hardware and then summed exactly, so the result
/// depends only on the multiset of (a_i, b_i) pairs.
inline double exact_dot(const double* a, std::size_t sa, const double* b, std::size_t sb, std::size_t n) {
    ExactAcc acc;
    for (std::size_t i = 0; i < n; ++i) acc.add(a[i * sa] * b[i * sb]);
    return acc.value();
}

inline double exact_dot(const double* a, const double* b, std::size_t n) {
    return exact_dot(a, 1, b, 1, n);
}

}  // namespace gmc
