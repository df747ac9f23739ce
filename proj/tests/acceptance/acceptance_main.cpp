// Acceptance suite. Each criterion prints one PASS/FAIL line; the process
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "core/commands.hpp"
#include "core/config.hpp"
#include "core/metrics.hpp"
#include "core/network.hpp"
#include "core/se_blocks.hpp"
#include "core/tensor_file.hpp"
#include "core/training.hpp"
#include "oracles.hpp"

using namespace scseg;
using oracles::random_tensor;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

int g_failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", o.pass ? "PASS" : "FAIL", id,
                name.c_str(), seconds, o.detail.empty() ? "" : " -- ", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++g_failures;
}

template <class Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        fn(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail += std::string("exception: ") + e.what();
    }
    report(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count());
}

// ---- criterion bodies --------------------------------------------------------

void complexity_reproduction(Outcome& o) {
    o.require(network_se_overhead(std::vector<int64_t>(8, 64), SEVariant::scse, 2) == 33280,
              "scse overhead for 8 blocks at C=64 != 33280");
    const Network vanilla = Network::build(ArchSpec::full_scale(), 1);
    const int64_t base = vanilla.param_count();
    o.require(base >= 1'800'000 && base <= 2'400'000,
              "full-scale vanilla count " + std::to_string(base) + " outside [1.8e6, 2.4e6]");
    const double pct = 100.0 * 33280.0 / double(base);
    o.require(pct >= 1.3 && pct <= 1.9,
              "overhead percentage " + std::to_string(pct) + " outside [1.3, 1.9]");
}

void equation_fidelity(Outcome& o) {
    const Tensor u = random_tensor({2, 8, 6, 6}, 1001, -2, 2);
    const SEParams c0 = SEParams::zeros(SEVariant::cse, 8, 2);
    const SEParams s0 = SEParams::zeros(SEVariant::sse, 8, 2);
    o.require(max_abs_diff(scse_forward(u, c0, s0), u) <= 1e-12,
              "zero-init scse is not the identity");

    const Tensor ch = cse_forward(u, c0);
    const Tensor sh = sse_forward(u, s0);
    bool halves = true;
    for (int64_t i = 0; i < u.numel(); ++i)
        halves = halves && ch[i] == 0.5 * u[i] && sh[i] == 0.5 * u[i];
    o.require(halves, "zero-init cse/sse do not scale by exactly 0.5");

    const SEParams pc = SEParams::init(SEVariant::cse, 8, 2, 1002);
    const SEParams ps = SEParams::init(SEVariant::sse, 8, 2, 1003);
    const Tensor sum = scse_forward(u, pc, ps);
    const Tensor lhs = cse_forward(u, pc);
    const Tensor rhs = sse_forward(u, ps);
    bool additive = true;
    for (int64_t i = 0; i < u.numel(); ++i) additive = additive && sum[i] == lhs[i] + rhs[i];
    o.require(additive, "scse is not the bit-exact sum of cse and sse");

    bool bounds = true;
    for (uint64_t draw = 0; draw < 100 && bounds; ++draw) {
        const Tensor uu = random_tensor({1, 6, 4, 4}, mix_seed(draw, "gate"), -3, 3);
        const SEParams qc = SEParams::init(SEVariant::cse, 6, 2, mix_seed(draw, "qc"));
        const SEParams qs = SEParams::init(SEVariant::sse, 6, 2, mix_seed(draw, "qs"));
        const Tensor oc = cse_forward(uu, qc);
        const Tensor osc = scse_forward(uu, qc, qs);
        for (int64_t i = 0; i < uu.numel(); ++i) {
            if (std::fabs(oc[i]) > std::fabs(uu[i]) ||
                std::fabs(osc[i]) > 2.0 * std::fabs(uu[i]) + 1e-15)
                bounds = false;
        }
    }
    o.require(bounds, "gate bounds violated on random instances");
}

void gradient_suite(Outcome& o) {
    for (const char* block : {"cse", "sse", "scse", "conv", "loss-ce", "loss-dice"}) {
        const CommandResult res = run_gradcheck(block, 1e-5, 7);
        o.require(res.status == 0, std::string(block) + " gradcheck failed");
    }
    // pooling, unpooling, upsampling and concatenation layers
    {
        const Tensor x = random_tensor({2, 3, 4, 4}, 2001);
        const Tensor lw = random_tensor({2, 3, 2, 2}, 2002, 0.5, 1.5);
        ad::Var xv = ad::Var::param(x);
        ad::backward(ad::weighted_sum(ad::max_pool2d(xv, 2).first, lw));
        const Tensor fd = ad::finite_diff_gradient(
            [&](const Tensor& t) {
                auto pooled = ad::max_pool2d(ad::Var::constant(t), 2);
                double acc = 0.0;
                for (int64_t i = 0; i < lw.numel(); ++i) acc += lw[i] * pooled.first.value()[i];
                return acc;
            },
            x);
        o.require(ad::max_relative_error(xv.grad(), fd) <= 1e-5, "max_pool2d gradient");
    }
    {
        const Tensor x = random_tensor({2, 3, 4, 4}, 2003);
        auto pooled = ad::max_pool2d(ad::Var::constant(x), 2);
        const IntTensor idx = pooled.second;
        const Tensor p = pooled.first.value();
        const Tensor lw = random_tensor({2, 3, 4, 4}, 2004, 0.5, 1.5);
        ad::Var pv = ad::Var::param(p);
        ad::backward(ad::weighted_sum(ad::max_unpool2d(pv, idx, 2), lw));
        const Tensor fd = ad::finite_diff_gradient(
            [&](const Tensor& t) {
                const Tensor y = ad::max_unpool2d(ad::Var::constant(t), idx, 2).value();
                double acc = 0.0;
                for (int64_t i = 0; i < lw.numel(); ++i) acc += lw[i] * y[i];
                return acc;
            },
            p);
        o.require(ad::max_relative_error(pv.grad(), fd) <= 1e-5, "max_unpool2d gradient");
    }
    {
        const Tensor x = random_tensor({1, 2, 3, 3}, 2005);
        const Tensor lw = random_tensor({1, 2, 6, 6}, 2006, 0.5, 1.5);
        ad::Var xv = ad::Var::param(x);
        ad::backward(ad::weighted_sum(ad::upsample_nearest(xv, 2), lw));
        const Tensor fd = ad::finite_diff_gradient(
            [&](const Tensor& t) {
                const Tensor y = ad::upsample_nearest(ad::Var::constant(t), 2).value();
                double acc = 0.0;
                for (int64_t i = 0; i < lw.numel(); ++i) acc += lw[i] * y[i];
                return acc;
            },
            x);
        o.require(ad::max_relative_error(xv.grad(), fd) <= 1e-5, "upsample_nearest gradient");
    }
    const CommandResult net = run_gradcheck("net", -1.0, 7);
    o.require(net.status == 0, "end-to-end network gradcheck failed");
}

void oracle_equivalences(Outcome& o) {
    // conv2d against the six-loop reference on 20 random small instances
    bool conv_ok = true;
    for (uint64_t seed = 1; seed <= 20 && conv_ok; ++seed) {
        Rng rng(seed * 7919);
        const int64_t N = 1 + rng.below(4), Cin = 1 + rng.below(4), Cout = 1 + rng.below(4);
        const int64_t k = 1 + 2 * rng.below(2);
        const int64_t pad = rng.below(2);
        const int64_t H = k + rng.below(int64_t(9) - k), W = k + rng.below(int64_t(9) - k);
        const Tensor x = random_tensor({N, Cin, H, W}, seed * 13 + 1);
        const Tensor w = random_tensor({Cout, Cin, k, k}, seed * 13 + 2);
        const Tensor b = random_tensor({Cout}, seed * 13 + 3);
        const Tensor got =
            ad::conv2d(ad::Var::constant(x), ad::Var::constant(w), ad::Var::constant(b), 1, pad)
                .value();
        if (max_abs_diff(got, oracles::conv2d_reference(x, w, &b, 1, pad)) > 1e-12)
            conv_ok = false;
    }
    o.require(conv_ok, "conv2d deviates from the nested-loop reference");

    // Wilcoxon exact p against brute-force enumeration for all n <= 12 fixtures
    bool wx_ok = true;
    for (int64_t n = 5; n <= 12 && wx_ok; ++n) {
        for (uint64_t trial = 0; trial < 8; ++trial) {
            Rng rng(mix_seed(uint64_t(n) * 31 + trial, "acc-wx"));
            std::vector<double> a, b;
            for (int64_t i = 0; i < n; ++i) {
                a.push_back(rng.uniform(0, 1));
                b.push_back(a.back() + (double(rng.below(9)) - 4.0) / 8.0);
            }
            size_t nonzero = 0;
            for (size_t i = 0; i < a.size(); ++i) nonzero += a[i] != b[i];
            if (nonzero < 5) continue;
            const SignificanceResult r = wilcoxon_signed_rank(a, b);
            const double oracle = oracles::wilcoxon_enum_p(a, b);
            if (r.method != SignificanceResult::Method::exact ||
                std::fabs(r.p_value - oracle) > 1e-12)
                wx_ok = false;
        }
    }
    o.require(wx_ok, "exact Wilcoxon p deviates from the 2^n enumeration");

    // Dice against hand-counted fixtures
    const IntTensor a({4}, {0, 1, 1, 2});
    const IntTensor b({4}, {0, 1, 0, 2});
    o.require(dice_per_class(a, a, 1) == 1.0, "dice identity fixture");
    o.require(dice_per_class(a, b, 1) == 2.0 * 1.0 / 3.0, "dice 2|inter|/(|P|+|G|) fixture");
    o.require(dice_per_class(a, b, 3) == 1.0, "dice both-empty fixture");
    const IntTensor p({4}, {1, 1, 0, 0});
    const IntTensor g({4}, {1, 0, 1, 0});
    o.require(dice_per_class(p, g, 1) == 0.5, "dice half-overlap fixture");
}

void training_recipe(Outcome& o) {
    TrainConfig cfg;
    o.require(lr_at_epoch(cfg, 0) == 0.01, "lr(0) != 0.01");
    o.require(std::fabs(lr_at_epoch(cfg, 10) - 0.001) <= 1e-15, "lr(10) != 0.001");
    o.require(std::fabs(lr_at_epoch(cfg, 25) - 0.0001) <= 1e-15, "lr(25) != 0.0001");

    std::vector<Parameter> params{{"p", Tensor({1}, {1.0})}};
    OptimState state;
    state.velocity.emplace_back(std::vector<int64_t>{1});
    state.velocity[0][0] = 0.2;
    sgd_update(params, {Tensor({1})}, state, 0.01, 0.95, 1e-4);
    o.require(std::fabs(state.velocity[0][0] - 0.1901) <= 1e-12 &&
                  std::fabs(params[0].value[0] - 0.998099) <= 1e-12,
              "sgd hand case mismatch");

    std::vector<uint32_t> v;
    for (int i = 0; i < 5; ++i) v.push_back(0);
    for (int i = 0; i < 3; ++i) v.push_back(1);
    for (int i = 0; i < 2; ++i) v.push_back(2);
    const ClassWeights w =
        median_frequency_weights(std::vector<IntTensor>{IntTensor({10}, std::move(v))}, 3);
    o.require(std::fabs(w.w[0] - 0.6) <= 1e-12 && std::fabs(w.w[1] - 1.0) <= 1e-12 &&
                  std::fabs(w.w[2] - 1.5) <= 1e-12,
              "median-frequency fixture mismatch");

    DatasetSpec dspec;
    dspec.num_train = 12;
    dspec.num_val = 4;
    dspec.num_test = 4;
    dspec.image_size = 16;
    const Dataset ds = generate_synthetic_dataset(dspec);
    TrainConfig tc;
    tc.max_epochs = 2;
    const TrainResult r1 = train_loop(ArchSpec::desk(), ds, tc);
    const TrainResult r2 = train_loop(ArchSpec::desk(), ds, tc);
    o.require(train_log_csv(r1.log) == train_log_csv(r2.log),
              "identical runs disagree in their logs");
}

// Shared between criteria 6 and 7.
AblationResult desk_grid(const std::string& scratch) {
    RunConfig cfg;
    cfg.data.num_train = 200;
    cfg.data.num_val = 25;
    cfg.data.num_test = 25;
    cfg.data.image_size = 32;
    cfg.data.num_classes = 4;
    cfg.data.seed = 42;
    cfg.train.seed = 42;
    cfg.train.max_epochs = 30;
    cfg.train.patience = 30; // the grid uses the full epoch budget
    cfg.arch = ArchSpec{};   // calibrated default profile
    cfg.output.dir = scratch;
    return run_ablation(cfg, {"unet", "sdnet", "densenet"}, {"none", "cse", "sse", "scse"});
}

void desk_scale_learning(Outcome& o, const AblationResult& grid, double seconds) {
    for (const AblationCell& c : grid.cells) {
        if (c.failed) {
            o.require(false, c.arch + "/" + c.variant + " failed: " + c.error);
            continue;
        }
        char buf[128];
        std::snprintf(buf, sizeof buf, "%s/%s dice %.3f < 0.80", c.arch.c_str(),
                      c.variant.c_str(), c.mean);
        o.require(c.mean >= 0.80, buf);
    }
    if (!grid.cells.empty()) {
        const AblationCell& star = grid.cell("unet", "scse");
        if (!star.failed) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "unet/scse dice %.3f < 0.90", star.mean);
            o.require(star.mean >= 0.90, buf);
        }
    }
    o.require(seconds <= 1800.0, "grid exceeded the 30 minute budget");
}

void report_shape(Outcome& o, const AblationResult& grid) {
    std::istringstream lines(grid.grid_csv);
    std::string line;
    std::getline(lines, line);
    o.require(line == "network,none,cse,sse,scse", "grid header mismatch: " + line);
    int rows = 0;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        ++rows;
        int cells = 0;
        size_t pos = line.find(',');
        while (pos != std::string::npos) {
            ++cells;
            const size_t next = line.find(',', pos + 1);
            const std::string cell = line.substr(pos + 1, next == std::string::npos
                                                              ? std::string::npos
                                                              : next - pos - 1);
            // Table cell format 0.XXX±0.XXX
            const size_t pm = cell.find("±");
            o.require(pm != std::string::npos && pm == 5 && cell.size() == 12,
                      "cell not in mean±std form: " + cell);
            pos = next;
        }
        o.require(cells == 4, "row does not have 4 variant cells");
    }
    o.require(rows == 3, "grid does not have 3 architecture rows");

    int pvalues = 0;
    for (const AblationCell& c : grid.cells)
        if (c.variant != "none" && c.p_vs_none >= 0.0) ++pvalues;
    o.require(pvalues == 9, "expected 9 p-values against the none column, got " +
                                std::to_string(pvalues));

    o.require(format_mean_std(0.842, 0.058) == "0.842±0.058",
              "cell format fixture mismatch");
}

void format_round_trips(Outcome& o, const std::string& scratch) {
    // container round trip across dtypes and ranks
    const std::string path = scratch + "/roundtrip.setf";
    std::vector<TensorFileEntry> entries;
    for (int rank = 0; rank <= 4; ++rank) {
        std::vector<int64_t> shape;
        for (int a = 0; a < rank; ++a) shape.push_back(a + 2);
        entries.push_back({"f" + std::to_string(rank),
                           random_tensor(shape, uint64_t(rank) * 3 + 1)});
        entries.push_back({"u" + std::to_string(rank),
                           oracles::random_labels(shape, uint64_t(rank) * 3 + 2, 1 << 20)});
    }
    write_tensor_file(path, entries);
    const auto back = read_tensor_file(path);
    bool rt = back.size() == entries.size();
    for (size_t i = 0; rt && i < entries.size(); ++i) {
        if (back[i].name != entries[i].name) rt = false;
        else if (const Tensor* t = std::get_if<Tensor>(&entries[i].value))
            rt = bitwise_equal(std::get<Tensor>(back[i].value), *t);
        else {
            const IntTensor& x = std::get<IntTensor>(entries[i].value);
            const IntTensor& y = std::get<IntTensor>(back[i].value);
            rt = x.same_shape(y);
            for (int64_t k = 0; rt && k < x.numel(); ++k) rt = x[k] == y[k];
        }
    }
    o.require(rt, "tensor container round trip is not bitwise");

    // checkpoint save/load reproduces identical test dice
    DatasetSpec dspec;
    dspec.num_train = 24;
    dspec.num_val = 6;
    dspec.num_test = 6;
    dspec.image_size = 16;
    const Dataset ds = generate_synthetic_dataset(dspec);
    TrainConfig tc;
    tc.max_epochs = 3;
    const TrainResult trained = train_loop(ArchSpec::desk(ArchKind::unet, SEVariant::scse), ds,
                                           tc);
    const DiceReport before = evaluate_network(trained.net, ds.test, 4, true, 4);
    const std::string ckpt = scratch + "/acceptance_ckpt.setf";
    save_network_params(ckpt, trained.net);
    Network reloaded = Network::build(trained.net.spec(), 999);
    load_network_params(ckpt, reloaded);
    const DiceReport after = evaluate_network(reloaded, ds.test, 4, true, 4);
    o.require(before.mean == after.mean && before.stdev == after.stdev,
              "reloaded checkpoint changes the test dice");
}

} // namespace

int main() {
    const std::string scratch =
        (std::filesystem::temp_directory_path() / "scseg_acceptance").string();
    std::filesystem::remove_all(scratch);
    std::filesystem::create_directories(scratch);

    criterion(1, "complexity reproduction", complexity_reproduction);
    criterion(2, "equation fidelity", equation_fidelity);
    criterion(3, "gradient suite", gradient_suite);
    criterion(4, "oracle equivalences", oracle_equivalences);
    criterion(5, "training recipe fidelity", training_recipe);

    // criteria 6 and 7 share one grid run
    AblationResult grid;
    double grid_seconds = 0.0;
    bool grid_ok = true;
    std::string grid_error;
    {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            grid = desk_grid(scratch + "/grid");
        } catch (const std::exception& e) {
            grid_ok = false;
            grid_error = e.what();
        }
        grid_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    criterion(6, "desk-scale learning", [&](Outcome& o) {
        o.require(grid_ok, "grid run threw: " + grid_error);
        if (grid_ok) desk_scale_learning(o, grid, grid_seconds);
    });
    criterion(7, "report shape", [&](Outcome& o) {
        o.require(grid_ok, "grid run threw: " + grid_error);
        if (grid_ok) report_shape(o, grid);
    });
    criterion(8, "format round trips", [&](Outcome& o) { format_round_trips(o, scratch); });

    std::filesystem::remove_all(scratch);
    if (g_failures) {
        std::printf("ACCEPTANCE: %d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("ACCEPTANCE: all criteria passed\n");
    return 0;
}
