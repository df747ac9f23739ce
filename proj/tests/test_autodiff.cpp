#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "core/autodiff.hpp"
#include "core/errors.hpp"
#include "oracles.hpp"

using namespace scseg;
using oracles::random_tensor;

namespace {

double dot(const Tensor& w, const Tensor& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) acc += w[i] * x[i];
    return acc;
}

// Analytic-vs-finite-difference comparison for an operation built from a list
// of input tensors. Loss is a random-weighted sum of the output so every
// gradient entry is generically nonzero.
double op_gradcheck(const std::vector<Tensor>& inputs,
                    const std::function<ad::Var(const std::vector<ad::Var>&)>& build,
                    uint64_t seed, double eps = 1e-5) {
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(ad::Var::param(t));
    ad::Var out = build(vars);
    const Tensor lw = random_tensor(out.value().shape(), mix_seed(seed, "lw"), 0.5, 1.5);
    ad::backward(ad::weighted_sum(out, lw));

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor fd = ad::finite_diff_gradient(
            [&](const Tensor& t) {
                std::vector<ad::Var> probe;
                for (size_t j = 0; j < inputs.size(); ++j)
                    probe.push_back(ad::Var::constant(j == i ? t : inputs[j]));
                return dot(lw, build(probe).value());
            },
            inputs[i], eps);
        worst = std::max(worst, ad::max_relative_error(vars[i].grad(), fd));
    }
    return worst;
}

} // namespace

TEST_CASE("conv2d identity kernel preserves the input") {
    Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w({1, 1, 1, 1}, {1.0});
    ad::Var y = ad::conv2d(ad::Var::constant(x), ad::Var::constant(w), {}, 1, 0);
    CHECK(bitwise_equal(y.value(), x));
}

TEST_CASE("conv2d zero weight and bias gives zeros") {
    const Tensor x = random_tensor({2, 3, 4, 4}, 11);
    Tensor w({2, 3, 3, 3});
    Tensor b({2});
    ad::Var y =
        ad::conv2d(ad::Var::constant(x), ad::Var::constant(w), ad::Var::constant(b), 1, 1);
    for (int64_t i = 0; i < y.value().numel(); ++i) CHECK(y.value()[i] == 0.0);
}

TEST_CASE("conv2d matches the nested-loop reference") {
    const Tensor x = random_tensor({2, 3, 5, 5}, 21);
    const Tensor w = random_tensor({4, 3, 3, 3}, 22);
    const Tensor b = random_tensor({4}, 23);
    ad::Var y =
        ad::conv2d(ad::Var::constant(x), ad::Var::constant(w), ad::Var::constant(b), 1, 1);
    CHECK(max_abs_diff(y.value(), oracles::conv2d_reference(x, w, &b, 1, 1)) <= 1e-12);

    // random small instances, strides and paddings included
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 977);
        const int64_t N = 1 + rng.below(4), Cin = 1 + rng.below(4), Cout = 1 + rng.below(4);
        const int64_t k = 1 + 2 * rng.below(2); // 1 or 3
        const int64_t pad = rng.below(3);
        int64_t stride = 1 + rng.below(2);
        int64_t H = k + rng.below(6), W = k + rng.below(6);
        // round spatial extents so the output extent is integral
        H = H + (stride - (H + 2 * pad - k) % stride) % stride;
        W = W + (stride - (W + 2 * pad - k) % stride) % stride;
        const Tensor xx = random_tensor({N, Cin, H, W}, seed * 3 + 1);
        const Tensor ww = random_tensor({Cout, Cin, k, k}, seed * 3 + 2);
        ad::Var yy = ad::conv2d(ad::Var::constant(xx), ad::Var::constant(ww), {}, stride, pad);
        CHECK(max_abs_diff(yy.value(), oracles::conv2d_reference(xx, ww, nullptr, stride, pad)) <=
              1e-12);
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    const Tensor x = random_tensor({1, 3, 5, 5}, 1);
    CHECK_THROWS_AS(ad::conv2d(ad::Var::constant(x),
                               ad::Var::constant(random_tensor({2, 4, 3, 3}, 2)), {}, 1, 1),
                    ShapeError); // channel mismatch
    CHECK_THROWS_AS(ad::conv2d(ad::Var::constant(x),
                               ad::Var::constant(random_tensor({2, 3, 2, 2}, 3)), {}, 1, 0),
                    ShapeError); // even kernel
    CHECK_THROWS_AS(ad::conv2d(ad::Var::constant(x),
                               ad::Var::constant(random_tensor({2, 3, 3, 3}, 4)), {}, 3, 0),
                    ShapeError); // non-integer output extent: (5 - 3) % 3 != 0
}

TEST_CASE("fully_connected basics") {
    Tensor x({2}, {1, 2});
    Tensor id({2, 2}, {1, 0, 0, 1});
    CHECK(bitwise_equal(ad::fully_connected(ad::Var::constant(x), ad::Var::constant(id), {})
                            .value(),
                        x));
    Tensor zero({3, 2});
    const Tensor y0 =
        ad::fully_connected(ad::Var::constant(x), ad::Var::constant(zero), {}).value();
    for (int64_t i = 0; i < y0.numel(); ++i) CHECK(y0[i] == 0.0);

    Tensor w({2, 2}, {1, 1, 1, -1});
    const Tensor y =
        ad::fully_connected(ad::Var::constant(x), ad::Var::constant(w), {}).value();
    CHECK(y[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-15));

    CHECK_THROWS_AS(
        ad::fully_connected(ad::Var::constant(x), ad::Var::constant(Tensor({2, 3})), {}),
        ShapeError);
}

TEST_CASE("max_pool2d values, indices and errors") {
    // constant input: ties break to the first window position
    ad::Var c = ad::Var::constant(Tensor::full({1, 1, 4, 4}, 2.5));
    auto [pc, ic] = ad::max_pool2d(c, 2);
    for (int64_t i = 0; i < pc.value().numel(); ++i) {
        CHECK(pc.value()[i] == 2.5);
        CHECK(ic[i] == 0);
    }

    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto [p, idx] = ad::max_pool2d(ad::Var::constant(x), 2);
    CHECK(p.value()[0] == 4.0);
    CHECK(idx[0] == 3); // window-relative (1,1)

    const Tensor r = random_tensor({2, 3, 6, 6}, 31);
    auto [pr, ir] = ad::max_pool2d(ad::Var::constant(r), 2);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t oh = 0; oh < 3; ++oh)
                for (int64_t ow = 0; ow < 3; ++ow) {
                    double best = -1e300;
                    for (int64_t a = 0; a < 2; ++a)
                        for (int64_t b = 0; b < 2; ++b)
                            best = std::max(best, r.at4(n, ch, 2 * oh + a, 2 * ow + b));
                    CHECK(pr.value().at4(n, ch, oh, ow) == best);
                }

    CHECK_THROWS_AS(ad::max_pool2d(ad::Var::constant(random_tensor({1, 1, 5, 4}, 1)), 2),
                    ShapeError);
}

TEST_CASE("max_unpool2d scatters to recorded positions") {
    // round trip: nonzeros exactly at argmax positions, values preserved
    const Tensor x = random_tensor({1, 2, 4, 4}, 41);
    auto [p, idx] = ad::max_pool2d(ad::Var::constant(x), 2);
    const Tensor up = ad::max_unpool2d(p, idx, 2).value();
    int64_t nonzeros = 0;
    for (int64_t i = 0; i < up.numel(); ++i) {
        if (up[i] != 0.0) ++nonzeros;
    }
    CHECK(nonzeros == p.value().numel());
    for (int64_t i = 0; i < p.value().numel(); ++i) {
        bool found = false;
        for (int64_t j = 0; j < up.numel(); ++j)
            if (up[j] == p.value()[i]) found = true;
        CHECK(found);
    }

    // zero input -> zero output
    IntTensor zidx({1, 1, 1, 1});
    const Tensor z = ad::max_unpool2d(ad::Var::constant(Tensor({1, 1, 1, 1})), zidx, 2).value();
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);

    // single value 5 at window-relative (1,0)
    Tensor one({1, 1, 1, 1}, {5.0});
    IntTensor oidx({1, 1, 1, 1}, {2}); // (1,0) -> 1*2+0
    const Tensor u = ad::max_unpool2d(ad::Var::constant(one), oidx, 2).value();
    CHECK(u.at4(0, 0, 0, 0) == 0.0);
    CHECK(u.at4(0, 0, 0, 1) == 0.0);
    CHECK(u.at4(0, 0, 1, 0) == 5.0);
    CHECK(u.at4(0, 0, 1, 1) == 0.0);

    IntTensor bad({1, 1, 1, 1}, {4}); // outside a 2x2 window
    CHECK_THROWS_AS(ad::max_unpool2d(ad::Var::constant(one), bad, 2), ShapeError);
}

TEST_CASE("upsample_nearest replication and gradient") {
    const Tensor x = random_tensor({1, 2, 3, 3}, 51);
    CHECK(bitwise_equal(ad::upsample_nearest(ad::Var::constant(x), 1).value(), x));

    Tensor v({1, 1, 1, 1}, {3.0});
    const Tensor up = ad::upsample_nearest(ad::Var::constant(v), 2).value();
    for (int64_t i = 0; i < 4; ++i) CHECK(up[i] == 3.0);

    // gradient of sum(upsample(x)) is k^2 everywhere
    ad::Var p = ad::Var::param(x);
    ad::backward(ad::sum_all(ad::upsample_nearest(p, 3)));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(p.grad()[i] == doctest::Approx(9.0));
    Tensor fd = ad::finite_diff_gradient(
        [](const Tensor& t) {
            return ad::sum_all(ad::upsample_nearest(ad::Var::constant(t), 3)).value()[0];
        },
        x);
    CHECK(ad::max_relative_error(p.grad(), fd) <= 1e-8);
}

TEST_CASE("activations") {
    Tensor x({3}, {-1.0, 0.0, 2.0});
    const Tensor r = ad::relu(ad::Var::constant(x)).value();
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 2.0);

    const Tensor s = ad::sigmoid(ad::Var::constant(Tensor({1}, {0.0}))).value();
    CHECK(s[0] == 0.5);

    ad::Var p = ad::Var::param(Tensor({1}, {0.0}));
    ad::backward(ad::sum_all(ad::sigmoid(p)));
    CHECK(std::fabs(p.grad()[0] - 0.25) <= 1e-15);
    Tensor fd = ad::finite_diff_gradient(
        [](const Tensor& t) {
            return ad::sum_all(ad::sigmoid(ad::Var::constant(t))).value()[0];
        },
        Tensor({1}, {0.0}));
    CHECK(std::fabs(fd[0] - 0.25) <= 1e-8);
}

TEST_CASE("softmax_channels properties") {
    const Tensor eq = Tensor::full({1, 4, 2, 2}, 1.7);
    const Tensor p = ad::softmax_channels(ad::Var::constant(eq)).value();
    for (int64_t i = 0; i < p.numel(); ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-14));

    // per-pixel sums and shift invariance
    const Tensor logits = random_tensor({2, 3, 4, 4}, 61, -3, 3);
    const Tensor q = ad::softmax_channels(ad::Var::constant(logits)).value();
    Tensor shifted = logits;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < 16; ++i) shifted[(n * 3 + c) * 16 + i] += 0.37 * double(n * 16 + i);
    const Tensor q2 = ad::softmax_channels(ad::Var::constant(shifted)).value();
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t i = 0; i < 16; ++i) {
            double sum = 0.0;
            for (int64_t c = 0; c < 3; ++c) sum += q[(n * 3 + c) * 16 + i];
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
            for (int64_t c = 0; c < 3; ++c)
                CHECK(std::fabs(q[(n * 3 + c) * 16 + i] - q2[(n * 3 + c) * 16 + i]) <= 1e-12);
        }

    Tensor two({1, 2, 1, 1}, {0.0, std::log(3.0)});
    const Tensor pr = ad::softmax_channels(ad::Var::constant(two)).value();
    CHECK(pr[0] == doctest::Approx(0.25).epsilon(1e-13));
    CHECK(pr[1] == doctest::Approx(0.75).epsilon(1e-13));

    CHECK_THROWS_AS(ad::softmax_channels(ad::Var::constant(Tensor({1, 1, 2, 2}))), ShapeError);
}

TEST_CASE("concat_channels") {
    const Tensor a = random_tensor({1, 2, 4, 4}, 71);
    const Tensor b = random_tensor({1, 3, 4, 4}, 72);
    ad::Var cat = ad::concat_channels(ad::Var::constant(a), ad::Var::constant(b));
    CHECK(cat.value().shape() == std::vector<int64_t>{1, 5, 4, 4});

    // empty second operand is the identity
    ad::Var same = ad::concat_channels(ad::Var::constant(a), ad::Var::constant(Tensor()));
    CHECK(bitwise_equal(same.value(), a));

    CHECK_THROWS_AS(ad::concat_channels(ad::Var::constant(a),
                                        ad::Var::constant(random_tensor({1, 2, 3, 4}, 73))),
                    ShapeError);

    const double err = op_gradcheck(
        {a, b}, [](const std::vector<ad::Var>& v) { return ad::concat_channels(v[0], v[1]); },
        74);
    CHECK(err <= 1e-6);
}

TEST_CASE("backward on trivial graphs") {
    // d(x)/dx = 1 for the identity graph
    ad::Var x = ad::Var::param(Tensor::scalar(4.0));
    ad::backward(x);
    CHECK(x.grad()[0] == 1.0);

    // product rule
    ad::Var a = ad::Var::param(Tensor::scalar(2.0));
    ad::Var b = ad::Var::param(Tensor::scalar(3.0));
    ad::backward(ad::mul(a, b));
    CHECK(a.grad()[0] == 3.0);
    CHECK(b.grad()[0] == 2.0);

    // parameters off the loss path keep zero gradients
    ad::Var on = ad::Var::param(random_tensor({3}, 81));
    ad::Var off = ad::Var::param(random_tensor({3}, 82));
    ad::backward(ad::sum_all(on));
    for (int64_t i = 0; i < 3; ++i) CHECK(off.grad()[i] == 0.0);

    CHECK_THROWS_AS(ad::backward(ad::Var::param(random_tensor({2}, 83))), ShapeError);
}

TEST_CASE("backward twice is bit-identical") {
    const Tensor x = random_tensor({2, 3, 4, 4}, 91);
    const Tensor w = random_tensor({3, 3, 3, 3}, 92);
    ad::Var xv = ad::Var::param(x);
    ad::Var wv = ad::Var::param(w);
    ad::Var loss = ad::mean_all(ad::relu(ad::conv2d(xv, wv, {}, 1, 1)));
    ad::backward(loss);
    const Tensor gx = xv.grad(), gw = wv.grad();
    ad::backward(loss);
    CHECK(bitwise_equal(gx, xv.grad()));
    CHECK(bitwise_equal(gw, wv.grad()));
}

TEST_CASE("every layer matches finite differences over 5 seeds") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const Tensor x = random_tensor({2, 3, 4, 4}, mix_seed(seed, "x"));
        const Tensor w = random_tensor({4, 3, 3, 3}, mix_seed(seed, "w"));
        const Tensor b = random_tensor({4}, mix_seed(seed, "b"));
        CHECK(op_gradcheck({x, w, b},
                           [](const std::vector<ad::Var>& v) {
                               return ad::conv2d(v[0], v[1], v[2], 1, 1);
                           },
                           seed) <= 1e-5);

        const Tensor fx = random_tensor({3, 6}, mix_seed(seed, "fx"));
        const Tensor fw = random_tensor({4, 6}, mix_seed(seed, "fw"));
        const Tensor fb = random_tensor({4}, mix_seed(seed, "fb"));
        CHECK(op_gradcheck({fx, fw, fb},
                           [](const std::vector<ad::Var>& v) {
                               return ad::fully_connected(v[0], v[1], v[2]);
                           },
                           seed + 10) <= 1e-5);

        CHECK(op_gradcheck({x},
                           [](const std::vector<ad::Var>& v) {
                               return ad::max_pool2d(v[0], 2).first;
                           },
                           seed + 20) <= 1e-5);

        auto pooled = ad::max_pool2d(ad::Var::constant(x), 2);
        const IntTensor idx = pooled.second;
        CHECK(op_gradcheck({pooled.first.value()},
                           [&](const std::vector<ad::Var>& v) {
                               return ad::max_unpool2d(v[0], idx, 2);
                           },
                           seed + 30) <= 1e-5);

        CHECK(op_gradcheck({x},
                           [](const std::vector<ad::Var>& v) {
                               return ad::upsample_nearest(v[0], 2);
                           },
                           seed + 40) <= 1e-5);

        CHECK(op_gradcheck({x}, [](const std::vector<ad::Var>& v) { return ad::relu(v[0]); },
                           seed + 50) <= 1e-5);
        CHECK(op_gradcheck({x}, [](const std::vector<ad::Var>& v) { return ad::sigmoid(v[0]); },
                           seed + 60) <= 1e-5);
        CHECK(op_gradcheck({x},
                           [](const std::vector<ad::Var>& v) {
                               return ad::softmax_channels(v[0]);
                           },
                           seed + 70) <= 1e-5);

        const Tensor gate_c = random_tensor({2, 3}, mix_seed(seed, "gc"));
        CHECK(op_gradcheck({x, gate_c},
                           [](const std::vector<ad::Var>& v) {
                               return ad::scale_channels(v[0], v[1]);
                           },
                           seed + 80) <= 1e-5);
        const Tensor gate_s = random_tensor({2, 1, 4, 4}, mix_seed(seed, "gs"));
        CHECK(op_gradcheck({x, gate_s},
                           [](const std::vector<ad::Var>& v) {
                               return ad::scale_spatial(v[0], v[1]);
                           },
                           seed + 90) <= 1e-5);
        CHECK(op_gradcheck({x},
                           [](const std::vector<ad::Var>& v) { return ad::channel_mean(v[0]); },
                           seed + 100) <= 1e-5);
    }
}

TEST_CASE("finite_diff_gradient oracle sanity") {
    const Tensor x = random_tensor({5}, 101);
    Tensor ones = ad::finite_diff_gradient(
        [](const Tensor& t) {
            double s = 0.0;
            for (int64_t i = 0; i < t.numel(); ++i) s += t[i];
            return s;
        },
        x);
    for (int64_t i = 0; i < 5; ++i) CHECK(std::fabs(ones[i] - 1.0) <= 1e-10);

    Tensor sq = ad::finite_diff_gradient(
        [](const Tensor& t) {
            double s = 0.0;
            for (int64_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
            return s;
        },
        Tensor({2}, {1.0, 2.0}));
    CHECK(std::fabs(sq[0] - 2.0) <= 1e-8);
    CHECK(std::fabs(sq[1] - 4.0) <= 1e-8);

    Tensor zc = ad::finite_diff_gradient([](const Tensor&) { return 42.0; }, x);
    for (int64_t i = 0; i < 5; ++i) CHECK(std::fabs(zc[i]) <= 1e-12);

    CHECK_THROWS_AS(ad::finite_diff_gradient([](const Tensor&) { return 0.0; }, x, 0.0),
                    ShapeError);
}
