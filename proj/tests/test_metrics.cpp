#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/errors.hpp"
#include "core/metrics.hpp"
#include "core/rng.hpp"
#include "oracles.hpp"

using namespace scseg;

namespace {

IntTensor labels(std::vector<uint32_t> v) {
    const int64_t n = int64_t(v.size());
    return IntTensor({n}, std::move(v));
}

} // namespace

TEST_CASE("dice_per_class") {
    const IntTensor a = labels({0, 1, 1, 2});
    CHECK(dice_per_class(a, a, 1) == 1.0);
    CHECK(dice_per_class(a, a, 0) == 1.0);

    const IntTensor b = labels({1, 0, 0, 2});
    CHECK(dice_per_class(a, b, 1) == 0.0); // disjoint nonempty masks

    // |P|=2, |G|=2, overlap 1 -> 0.5
    const IntTensor p = labels({1, 1, 0, 0});
    const IntTensor g = labels({1, 0, 1, 0});
    CHECK(dice_per_class(p, g, 1) == 0.5);

    // both empty -> declared 1.0
    CHECK(dice_per_class(labels({0, 0}), labels({0, 0}), 3) == 1.0);

    CHECK_THROWS_AS(dice_per_class(a, labels({0, 1}), 1), ShapeError);

    // symmetry and relabeling invariance
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<uint32_t> pv, gv;
        for (int i = 0; i < 24; ++i) {
            pv.push_back(uint32_t(rng.below(3)));
            gv.push_back(uint32_t(rng.below(3)));
        }
        const IntTensor pp = labels(pv), gg = labels(gv);
        for (uint32_t c = 0; c < 3; ++c)
            CHECK(dice_per_class(pp, gg, c) == dice_per_class(gg, pp, c));
        // swap labels 0 <-> 2 on both sides
        std::vector<uint32_t> pr = pv, gr = gv;
        for (auto& v : pr) v = v == 0 ? 2 : (v == 2 ? 0 : v);
        for (auto& v : gr) v = v == 0 ? 2 : (v == 2 ? 0 : v);
        CHECK(dice_per_class(labels(pr), labels(gr), 2) == dice_per_class(pp, gg, 0));
    }
}

TEST_CASE("dice_report aggregation") {
    const IntTensor s = labels({0, 1, 1, 2});
    DiceReport perfect = dice_report({s}, {s}, 3, false);
    CHECK(perfect.mean == 1.0);
    CHECK(perfect.stdev == 0.0);

    // identical sets -> exactly 1
    DiceReport self = dice_report({s, s, s}, {s, s, s}, 3, true);
    CHECK(self.mean == 1.0);

    // two samples with class-mean dice 0.8 and 0.6 -> 0.7 +/- 0.1 (population);
    // 2 classes with background excluded, so the class mean is class-1 dice.
    const IntTensor g1 = labels({1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
    const IntTensor p1 = labels({1, 1, 1, 1, 0, 1, 0, 0, 0, 0}); // |P|=5,|G|=5,inter=4 -> 0.8
    const IntTensor g2 = labels({1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
    const IntTensor p2 = labels({1, 1, 1, 0, 0, 1, 1, 0, 0, 0}); // |P|=5,|G|=5,inter=3 -> 0.6
    DiceReport two = dice_report({p1, p2}, {g1, g2}, 2, true);
    CHECK(two.sample_mean[0] == doctest::Approx(0.8));
    CHECK(two.sample_mean[1] == doctest::Approx(0.6));
    CHECK(two.mean == doctest::Approx(0.7));
    CHECK(two.stdev == doctest::Approx(0.1));

    // mean/std consistent with the per-sample matrix
    double acc = 0.0;
    for (const auto& row : two.per_sample) acc += row[1];
    CHECK(std::fabs(acc / 2.0 - two.mean) <= 1e-12);

    CHECK_THROWS_AS(dice_report({s}, {}, 3, false), ShapeError);
}

TEST_CASE("dice cell formatting") {
    CHECK(format_mean_std(0.842, 0.058) == "0.842±0.058");
    CHECK(format_mean_std(1.0, 0.0) == "1.000±0.000");
}

TEST_CASE("dice_report_csv is classes x samples") {
    const IntTensor s = labels({0, 1});
    const DiceReport r = dice_report({s, s, s}, {s, s, s}, 2, false);
    const std::string csv = dice_report_csv(r);
    CHECK(csv == "class,s0,s1,s2\n0,1.000000,1.000000,1.000000\n1,1.000000,1.000000,1.000000\n");
}

TEST_CASE("wilcoxon all-positive n=5 exact tail") {
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
    const std::vector<double> b{0.5, 1.0, 2.0, 3.0, 4.0};
    const SignificanceResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.n == 5);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(2.0 / 32.0).epsilon(1e-12));
    CHECK(r.method == SignificanceResult::Method::exact);
}

TEST_CASE("wilcoxon drops zero differences and rejects underpowered input") {
    std::vector<double> a{1, 2, 3, 4, 5, 6};
    std::vector<double> b = a;
    b[2] += 0.25; // one nonzero difference
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), ShapeError);
    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2}, {2, 1}), ShapeError);
}

TEST_CASE("wilcoxon antisymmetric differences sit near p = 1") {
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    const std::vector<double> b{1.5, 1.5, 3.5, 3.5, 5.5, 5.5}; // diffs -.5,+.5,-.5,+.5,-.5,+.5
    const SignificanceResult r = wilcoxon_signed_rank(a, b);
    const double oracle = oracles::wilcoxon_enum_p(a, b);
    CHECK(r.p_value == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(r.p_value > 0.5);
}

TEST_CASE("wilcoxon exact p matches brute-force enumeration for n in 5..12") {
    for (int64_t n = 5; n <= 12; ++n) {
        for (uint64_t trial = 0; trial < 6; ++trial) {
            Rng rng(mix_seed(uint64_t(n) * 131 + trial, "wx"));
            std::vector<double> a, b;
            for (int64_t i = 0; i < n; ++i) {
                a.push_back(rng.uniform(0, 1));
                // quantized so ties actually occur
                b.push_back(a.back() + (double(rng.below(9)) - 4.0) / 8.0);
            }
            size_t nonzero = 0;
            for (int64_t i = 0; i < n; ++i) nonzero += a[size_t(i)] != b[size_t(i)];
            if (nonzero < 5) continue;
            double w_oracle = 0.0;
            const double p_oracle = oracles::wilcoxon_enum_p(a, b, &w_oracle);
            const SignificanceResult r = wilcoxon_signed_rank(a, b);
            CHECK(r.method == SignificanceResult::Method::exact);
            CHECK(r.statistic == doctest::Approx(w_oracle).epsilon(1e-12));
            CHECK(r.p_value == doctest::Approx(p_oracle).epsilon(1e-12));
        }
    }
}

TEST_CASE("wilcoxon normal approximation is close to exact at n = 12") {
    int compared = 0;
    for (uint64_t trial = 0; trial < 16; ++trial) {
        Rng rng(mix_seed(trial, "wnorm"));
        std::vector<double> a, b;
        for (int i = 0; i < 12; ++i) {
            a.push_back(rng.uniform(0, 1));
            b.push_back(a.back() + rng.uniform(-0.5, 0.4));
        }
        const SignificanceResult exact = wilcoxon_signed_rank(a, b);
        if (exact.n != 12) continue;
        const SignificanceResult approx = wilcoxon_signed_rank(a, b, /*exact_threshold=*/0);
        REQUIRE(approx.method == SignificanceResult::Method::normal_approx);
        CHECK(std::fabs(approx.p_value - exact.p_value) <= 0.01);
        ++compared;
    }
    CHECK(compared >= 10);
}

TEST_CASE("wilcoxon switches to the normal approximation for n > 12") {
    Rng rng(99);
    std::vector<double> a, b;
    for (int i = 0; i < 20; ++i) {
        a.push_back(rng.uniform(0, 1));
        b.push_back(a.back() + rng.uniform(-0.3, 0.5));
    }
    const SignificanceResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.method == SignificanceResult::Method::normal_approx);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value <= 1.0);
}
