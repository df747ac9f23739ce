// Independent reference implementations used as test oracles. These must stay
// decoupled from the library code paths they verify.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace oracles {

inline scseg::Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, double lo = -1.0,
                                   double hi = 1.0) {
    scseg::Rng rng(seed);
    scseg::Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline scseg::IntTensor random_labels(std::vector<int64_t> shape, uint64_t seed, int64_t K) {
    scseg::Rng rng(seed);
    scseg::IntTensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uint32_t(rng.below(K));
    return t;
}

// Six-nested-loop reference convolution (cross-correlation, no kernel flip).
inline scseg::Tensor conv2d_reference(const scseg::Tensor& x, const scseg::Tensor& w,
                                      const scseg::Tensor* bias, int64_t stride,
                                      int64_t padding) {
    const int64_t N = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int64_t Cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    scseg::Tensor out({N, Cout, Ho, Wo});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Cout; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias ? (*bias)[co] : 0.0;
                    for (int64_t ci = 0; ci < Cin; ++ci)
                        for (int64_t r = 0; r < kh; ++r)
                            for (int64_t s = 0; s < kw; ++s) {
                                const int64_t ih = oh * stride - padding + r;
                                const int64_t iw = ow * stride - padding + s;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at4(n, ci, ih, iw) * w.at4(co, ci, r, s);
                            }
                    out.at4(n, co, oh, ow) = acc;
                }
    return out;
}

// Brute-force two-sided Wilcoxon signed-rank p-value: enumerate all 2^n sign
// assignments of the ranked absolute differences and count those whose
// min(positive sum, negative sum) is at most the observed statistic.
// Average ranks on ties, zero differences dropped. Returns the p-value and
// optionally the observed W.
inline double wilcoxon_enum_p(const std::vector<double>& a, const std::vector<double>& b,
                              double* w_out = nullptr) {
    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
    const size_t n = d.size();

    // O(n^2) average ranks of |d|.
    std::vector<double> rank(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        size_t less = 0, equal = 0;
        for (size_t j = 0; j < n; ++j) {
            if (std::fabs(d[j]) < std::fabs(d[i])) ++less;
            if (std::fabs(d[j]) == std::fabs(d[i])) ++equal;
        }
        rank[i] = double(less) + (double(equal) + 1.0) / 2.0;
    }

    double wp = 0.0, wm = 0.0;
    for (size_t i = 0; i < n; ++i) (d[i] > 0 ? wp : wm) += rank[i];
    const double w_obs = std::min(wp, wm);
    if (w_out) *w_out = w_obs;

    uint64_t hits = 0;
    const uint64_t total = uint64_t(1) << n;
    double rank_sum = 0.0;
    for (size_t i = 0; i < n; ++i) rank_sum += rank[i];
    for (uint64_t mask = 0; mask < total; ++mask) {
        double sp = 0.0;
        for (size_t i = 0; i < n; ++i)
            if (mask & (uint64_t(1) << i)) sp += rank[i];
        if (std::min(sp, rank_sum - sp) <= w_obs + 1e-12) ++hits;
    }
    return double(hits) / double(total);
}

} // namespace oracles
