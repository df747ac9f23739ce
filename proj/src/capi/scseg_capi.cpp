#include "scseg/scseg.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "core/commands.hpp"
#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/se_blocks.hpp"
#include "core/tensor_file.hpp"

using namespace scseg;

struct scseg_config {
    RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// Runs fn, translating the exception hierarchy onto status codes.
template <class Fn>
scseg_status guarded(Fn&& fn) {
    try {
        g_last_error.clear();
        return fn();
    } catch (const ConfigError& e) {
        g_last_error = e.what();
        return SCSEG_ERROR_CONFIG;
    } catch (const NumericError& e) {
        g_last_error = e.what();
        return SCSEG_ERROR_NUMERIC;
    } catch (const std::exception& e) { // ShapeError, IoError, anything else
        g_last_error = e.what();
        return SCSEG_ERROR;
    }
}

scseg_status command_status(const CommandResult& res, char** out_report) {
    if (out_report) *out_report = dup_string(res.report);
    if (res.status == 0) return SCSEG_OK;
    g_last_error = "command finished with status " + std::to_string(res.status);
    return res.status == 2 ? SCSEG_ERROR_CONFIG
                           : (res.status == 3 ? SCSEG_ERROR_NUMERIC : SCSEG_ERROR);
}

} // namespace

extern "C" {

const char* scseg_version(void) { return "0.1.0"; }

const char* scseg_last_error(void) { return g_last_error.c_str(); }

void scseg_string_free(char* s) { std::free(s); }

scseg_status scseg_config_create(scseg_config** out) {
    return guarded([&] {
        *out = new scseg_config{RunConfig{}};
        return SCSEG_OK;
    });
}

scseg_status scseg_config_load(const char* path, scseg_config** out) {
    return guarded([&] {
        *out = new scseg_config{load_run_config(path)};
        return SCSEG_OK;
    });
}

scseg_status scseg_config_parse(const char* json_text, scseg_config** out) {
    return guarded([&] {
        *out = new scseg_config{parse_run_config(json_text)};
        return SCSEG_OK;
    });
}

void scseg_config_free(scseg_config* cfg) { delete cfg; }

scseg_status scseg_config_set(scseg_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        set_config_key(cfg->cfg, key, value);
        return SCSEG_OK;
    });
}

scseg_status scseg_config_get(const scseg_config* cfg, const char* key, char** out_value) {
    return guarded([&] {
        *out_value = dup_string(get_config_key(cfg->cfg, key));
        return SCSEG_OK;
    });
}

scseg_status scseg_config_to_json(const scseg_config* cfg, char** out_json) {
    return guarded([&] {
        *out_json = dup_string(run_config_to_json(cfg->cfg));
        return SCSEG_OK;
    });
}

scseg_status scseg_config_save(const scseg_config* cfg, const char* path) {
    return guarded([&] {
        write_file_atomic(path, run_config_to_json(cfg->cfg));
        return SCSEG_OK;
    });
}

scseg_status scseg_se_param_count(const char* variant, int64_t channels, int64_t reduction,
                                  int64_t* out_count) {
    return guarded([&] {
        *out_count = se_param_count(se_variant_from_string(variant), channels, reduction);
        return SCSEG_OK;
    });
}

scseg_status scseg_network_se_overhead(const int64_t* channels, size_t num_blocks,
                                       const char* variant, int64_t reduction,
                                       int64_t* out_count) {
    return guarded([&] {
        std::vector<int64_t> list(channels, channels + num_blocks);
        *out_count = network_se_overhead(list, se_variant_from_string(variant), reduction);
        return SCSEG_OK;
    });
}

scseg_status scseg_gradcheck(const char* block, double eps, uint64_t seed, int* out_pass,
                             char** out_report) {
    return guarded([&] {
        const CommandResult res = run_gradcheck(block, eps, seed);
        if (out_pass) *out_pass = res.status == 0 ? 1 : 0;
        if (out_report) *out_report = dup_string(res.report);
        return SCSEG_OK; // a failing check is a result, not an API error
    });
}

scseg_status scseg_paramcount(const scseg_config* cfg, char** out_report) {
    return guarded([&] { return command_status(run_paramcount(cfg->cfg), out_report); });
}

scseg_status scseg_train(const scseg_config* cfg, char** out_report) {
    return guarded([&] { return command_status(run_train(cfg->cfg), out_report); });
}

scseg_status scseg_eval(const scseg_config* cfg, const char* checkpoint, const char* split,
                        char** out_report) {
    return guarded(
        [&] { return command_status(run_eval(cfg->cfg, checkpoint, split), out_report); });
}

scseg_status scseg_ablate(const scseg_config* cfg, const char* archs_csv,
                          const char* variants_csv, char** out_report) {
    return guarded([&] {
        const CommandResult res = run_ablate(cfg->cfg, archs_csv, variants_csv);
        if (out_report) *out_report = dup_string(res.report);
        if (res.status == 0) return SCSEG_OK;
        g_last_error = "one or more ablation cells failed";
        return SCSEG_ERROR;
    });
}

} // extern "C"
