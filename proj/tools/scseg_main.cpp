// Command-line front end. Links only the C API.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scseg/scseg.h"

namespace {

int fail(scseg_status status) {
    std::fprintf(stderr, "error: %s\n", scseg_last_error());
    return int(status);
}

void print_and_free(char* report) {
    if (!report) return;
    std::fputs(report, stdout);
    scseg_string_free(report);
}

struct ConfigArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> sets; // key=value overrides
    std::string arch;
    std::string se;
    int64_t seed = -1;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file (JSON)");
    cmd->add_option("--out", args.out_dir, "output directory (overrides output.dir)");
    cmd->add_option("--set", args.sets, "override a config key, e.g. --set train.batch_size=8");
    cmd->add_option("--arch", args.arch, "architecture: unet|sdnet|densenet");
    cmd->add_option("--se", args.se, "recalibration variant: none|cse|sse|scse");
    cmd->add_option("--seed", args.seed, "training seed (overrides train.seed)");
}

// Builds the configuration with precedence flags > file > defaults.
scseg_status make_config(const ConfigArgs& args, scseg_config** out) {
    scseg_status st = args.config_path.empty() ? scseg_config_create(out)
                                               : scseg_config_load(args.config_path.c_str(), out);
    if (st != SCSEG_OK) return st;
    const auto set = [&](const std::string& key, const std::string& value) {
        if (st == SCSEG_OK) st = scseg_config_set(*out, key.c_str(), value.c_str());
    };
    if (!args.arch.empty()) set("arch.kind", args.arch);
    if (!args.se.empty()) set("arch.se_variant", args.se);
    if (args.seed >= 0) set("train.seed", std::to_string(args.seed));
    if (!args.out_dir.empty()) set("output.dir", args.out_dir);
    for (const std::string& kv : args.sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            st = SCSEG_ERROR_CONFIG;
            break;
        }
        set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (st != SCSEG_OK) scseg_config_free(*out);
    return st;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"squeeze-and-excitation recalibration for encoder/decoder segmentation "
                 "networks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(scseg_version()));

    // gradcheck
    std::string block;
    double eps = -1.0; // <= 0 selects the per-block default
    uint64_t gseed = 7;
    CLI::App* gradcheck = app.add_subcommand(
        "gradcheck", "verify analytic gradients against finite differences");
    gradcheck->add_option("--block", block, "cse|sse|scse|conv|loss-ce|loss-dice|net")
        ->required();
    gradcheck->add_option("--eps", eps, "finite-difference step (default 1e-5, end-to-end 1e-6)");
    gradcheck->add_option("--seed", gseed, "random seed");

    // paramcount
    ConfigArgs pc_args;
    CLI::App* paramcount =
        app.add_subcommand("paramcount", "parameter counts and recalibration overhead");
    add_config_flags(paramcount, pc_args);

    // train
    ConfigArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train one network per the config");
    add_config_flags(train, train_args);

    // eval
    ConfigArgs eval_args;
    std::string checkpoint, split = "test";
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    add_config_flags(eval, eval_args);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--split", split, "train|val|test");

    // ablate
    ConfigArgs abl_args;
    std::string archs = "unet,sdnet,densenet";
    std::string variants = "none,cse,sse,scse";
    CLI::App* ablate =
        app.add_subcommand("ablate", "train and evaluate the full architecture x variant grid");
    add_config_flags(ablate, abl_args);
    ablate->add_option("--archs", archs, "comma-separated architectures");
    ablate->add_option("--variants", variants, "comma-separated variants");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2; // usage errors exit with 2
    }

    if (gradcheck->parsed()) {
        int pass = 0;
        char* report = nullptr;
        const scseg_status st = scseg_gradcheck(block.c_str(), eps, gseed, &pass, &report);
        if (st != SCSEG_OK) return fail(st);
        print_and_free(report);
        return pass ? 0 : 1;
    }

    const auto with_config = [&](const ConfigArgs& args, auto&& fn) -> int {
        scseg_config* cfg = nullptr;
        scseg_status st = make_config(args, &cfg);
        if (st != SCSEG_OK) return fail(st);
        char* report = nullptr;
        st = fn(cfg, &report);
        print_and_free(report);
        scseg_config_free(cfg);
        return st == SCSEG_OK ? 0 : fail(st);
    };

    if (paramcount->parsed())
        return with_config(pc_args, [](scseg_config* c, char** r) { return scseg_paramcount(c, r); });
    if (train->parsed())
        return with_config(train_args, [](scseg_config* c, char** r) { return scseg_train(c, r); });
    if (eval->parsed())
        return with_config(eval_args, [&](scseg_config* c, char** r) {
            return scseg_eval(c, checkpoint.c_str(), split.c_str(), r);
        });
    if (ablate->parsed())
        return with_config(abl_args, [&](scseg_config* c, char** r) {
            return scseg_ablate(c, archs.c_str(), variants.c_str(), r);
        });
    return 2;
}
