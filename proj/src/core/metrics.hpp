#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace scseg {

// Overlap 2|P∩G| / (|P|+|G|) of class c between two label maps of equal
// shape. Both sets empty scores 1.0 (correct absence).
double dice_per_class(const IntTensor& pred, const IntTensor& gt, uint32_t c);

// Per-sample per-class Dice, aggregated as: each sample scores the mean over
// its evaluated classes, and the report carries mean +/- population std of
// those sample scores. Background (class 0) can be excluded from the means.
struct DiceReport {
    int64_t num_classes = 0;
    bool exclude_background = false;
    std::vector<std::vector<double>> per_sample; // [samples][classes]
    std::vector<double> per_class;               // mean over samples, per class
    std::vector<double> sample_mean;             // class-mean per sample
    double mean = 0.0;
    double stdev = 0.0;
};

DiceReport dice_report(const std::vector<IntTensor>& preds, const std::vector<IntTensor>& gts,
                       int64_t num_classes, bool exclude_background);

// Comma-separated matrix, rows = classes, columns = samples (boxplot input).
std::string dice_report_csv(const DiceReport& r);

// Table cell rendering, three decimals each: "0.842±0.058".
std::string format_mean_std(double mean, double stdev);

struct SignificanceResult {
    double statistic = 0.0; // W = min(positive rank sum, negative rank sum)
    int64_t n = 0;          // pairs remaining after dropping zero differences
    double p_value = 1.0;   // two-sided
    enum class Method { exact, normal_approx } method = Method::exact;
};

// Paired Wilcoxon signed-rank test on a - b. Zero differences are dropped;
// fewer than 5 remaining pairs is rejected as underpowered. Ties receive
// average ranks. Exact two-sided p (distribution over all 2^n sign
// assignments) for n <= exact_threshold, otherwise a normal approximation
// with continuity, tie-variance and kurtosis corrections. The threshold knob
// exists so tests can force the approximation onto small n.
SignificanceResult wilcoxon_signed_rank(const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        int64_t exact_threshold = 12);

} // namespace scseg
