#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "errors.hpp"

namespace scseg {

double dice_per_class(const IntTensor& pred, const IntTensor& gt, uint32_t c) {
    if (!pred.same_shape(gt))
        throw ShapeError("dice_per_class: shape mismatch, " + shape_to_string(pred.shape()) +
                         " vs " + shape_to_string(gt.shape()));
    int64_t inter = 0, p = 0, g = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool ip = pred[i] == c;
        const bool ig = gt[i] == c;
        p += ip;
        g += ig;
        inter += ip && ig;
    }
    if (p + g == 0) return 1.0; // correct absence
    return 2.0 * double(inter) / double(p + g);
}

DiceReport dice_report(const std::vector<IntTensor>& preds, const std::vector<IntTensor>& gts,
                       int64_t num_classes, bool exclude_background) {
    if (preds.size() != gts.size())
        throw ShapeError("dice_report: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(gts.size()) + " ground truths");
    if (preds.empty()) throw ShapeError("dice_report: empty sample list");
    if (num_classes < 2) throw ShapeError("dice_report: need at least 2 classes");

    DiceReport r;
    r.num_classes = num_classes;
    r.exclude_background = exclude_background;
    const int64_t c0 = exclude_background ? 1 : 0;
    r.per_sample.resize(preds.size());
    r.per_class.assign(size_t(num_classes), 0.0);
    for (size_t i = 0; i < preds.size(); ++i) {
        r.per_sample[i].resize(size_t(num_classes));
        double acc = 0.0;
        for (int64_t c = 0; c < num_classes; ++c) {
            const double d = dice_per_class(preds[i], gts[i], uint32_t(c));
            r.per_sample[i][size_t(c)] = d;
            r.per_class[size_t(c)] += d;
            if (c >= c0) acc += d;
        }
        r.sample_mean.push_back(acc / double(num_classes - c0));
    }
    for (double& v : r.per_class) v /= double(preds.size());

    const double n = double(r.sample_mean.size());
    r.mean = std::accumulate(r.sample_mean.begin(), r.sample_mean.end(), 0.0) / n;
    double var = 0.0;
    for (double v : r.sample_mean) var += (v - r.mean) * (v - r.mean);
    r.stdev = std::sqrt(var / n);
    return r;
}

std::string dice_report_csv(const DiceReport& r) {
    std::string out = "class";
    for (size_t s = 0; s < r.per_sample.size(); ++s) out += ",s" + std::to_string(s);
    out += "\n";
    char buf[32];
    for (int64_t c = 0; c < r.num_classes; ++c) {
        out += std::to_string(c);
        for (size_t s = 0; s < r.per_sample.size(); ++s) {
            std::snprintf(buf, sizeof buf, ",%.6f", r.per_sample[s][size_t(c)]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

std::string format_mean_std(double mean, double stdev) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f±%.3f", mean, stdev);
    return buf;
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

} // namespace

SignificanceResult wilcoxon_signed_rank(const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        int64_t exact_threshold) {
    if (a.size() != b.size())
        throw ShapeError("wilcoxon_signed_rank: paired lists differ in length");
    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        if (diff != 0.0) d.push_back(diff);
    }
    const int64_t n = int64_t(d.size());
    if (n < 5)
        throw ShapeError("wilcoxon_signed_rank: only " + std::to_string(n) +
                         " nonzero differences, need at least 5");

    // Average ranks of |d|; tie group ranks are half-integers, so store 2x.
    std::vector<size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::sort(idx.begin(), idx.end(),
              [&](size_t i, size_t j) { return std::fabs(d[i]) < std::fabs(d[j]); });
    std::vector<int64_t> rank2(d.size(), 0);
    for (size_t i = 0; i < idx.size();) {
        size_t j = i;
        while (j + 1 < idx.size() && std::fabs(d[idx[j + 1]]) == std::fabs(d[idx[i]])) ++j;
        const int64_t two_avg = int64_t(i + 1) + int64_t(j + 1); // 2 * average rank
        for (size_t t = i; t <= j; ++t) rank2[idx[t]] = two_avg;
        i = j + 1;
    }

    int64_t w2_plus = 0, w2_minus = 0;
    for (size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? w2_plus : w2_minus) += rank2[i];
    const int64_t w2_obs = std::min(w2_plus, w2_minus);

    SignificanceResult res;
    res.n = n;
    res.statistic = double(w2_obs) / 2.0;

    if (n <= exact_threshold) {
        // Exact null distribution of the positive rank sum over all 2^n sign
        // assignments, via subset-sum counting.
        const int64_t total2 = n * (n + 1); // 2 * sum of ranks
        std::vector<uint64_t> counts(size_t(total2 + 1), 0);
        counts[0] = 1;
        for (size_t i = 0; i < d.size(); ++i) {
            const int64_t r2 = rank2[i];
            for (int64_t w = total2 - r2; w >= 0; --w)
                counts[size_t(w + r2)] += counts[size_t(w)];
        }
        uint64_t hits = 0;
        for (int64_t w = 0; w <= total2; ++w)
            if (std::min(w, total2 - w) <= w2_obs) hits += counts[size_t(w)];
        res.p_value = double(hits) / std::pow(2.0, double(n));
        res.method = SignificanceResult::Method::exact;
    } else {
        // Moments of the positive rank sum from the realized (tied) ranks:
        // mean sum(r)/2, variance sum(r^2)/4, fourth cumulant -sum(r^4)/8.
        double mu = 0.0, var = 0.0, kappa4 = 0.0;
        for (size_t i = 0; i < d.size(); ++i) {
            const double r = double(rank2[i]) / 2.0;
            mu += r / 2.0;
            var += r * r / 4.0;
            kappa4 -= r * r * r * r / 8.0;
        }
        const double w = double(w2_obs) / 2.0;
        const double z = (w - mu + 0.5) / std::sqrt(var);
        // Edgeworth kurtosis refinement of the continuity-corrected normal.
        const double gamma2 = kappa4 / (var * var);
        const double phi = std::exp(-0.5 * z * z) / std::sqrt(6.283185307179586);
        const double one_sided = normal_cdf(z) - phi * (gamma2 / 24.0) * (z * z * z - 3.0 * z);
        res.p_value = std::min(1.0, std::max(2.0 * one_sided, 1e-300));
        res.method = SignificanceResult::Method::normal_approx;
    }
    return res;
}

} // namespace scseg
