/*
 * scseg C API: squeeze-and-excitation recalibration blocks inside
 * encoder/decoder segmentation networks, with training, evaluation and
 * ablation grids on synthetic data.
 *
 * All functions return a status code; on failure scseg_last_error() carries a
 * message for the calling thread. Strings returned through char** out
 * parameters are owned by the caller and released with scseg_string_free().
 */
#ifndef SCSEG_H
#define SCSEG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SCSEG_API __declspec(dllexport)
#elif defined(SCSEG_BUILDING)
#define SCSEG_API __attribute__((visibility("default")))
#else
#define SCSEG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum scseg_status {
    SCSEG_OK = 0,
    SCSEG_ERROR = 1,        /* runtime or evaluation failure */
    SCSEG_ERROR_CONFIG = 2, /* usage, schema or configuration error */
    SCSEG_ERROR_NUMERIC = 3 /* non-finite values during optimization */
} scseg_status;

/* Opaque run-configuration document (JSON with top-level keys arch, train,
 * data, output; unknown keys are rejected). */
typedef struct scseg_config scseg_config;

SCSEG_API const char* scseg_version(void);

/* Message of the most recent failure on this thread; empty string if none. */
SCSEG_API const char* scseg_last_error(void);

SCSEG_API void scseg_string_free(char* s);

/* ---- configuration ------------------------------------------------------ */

SCSEG_API scseg_status scseg_config_create(scseg_config** out);
SCSEG_API scseg_status scseg_config_load(const char* path, scseg_config** out);
SCSEG_API scseg_status scseg_config_parse(const char* json_text, scseg_config** out);
SCSEG_API void scseg_config_free(scseg_config* cfg);

/* Dotted-path override, e.g. ("train.batch_size", "8") or
 * ("arch.se_variant", "scse"). The value is parsed as JSON when possible,
 * otherwise taken as a string. */
SCSEG_API scseg_status scseg_config_set(scseg_config* cfg, const char* key, const char* value);
SCSEG_API scseg_status scseg_config_get(const scseg_config* cfg, const char* key,
                                        char** out_value);
SCSEG_API scseg_status scseg_config_to_json(const scseg_config* cfg, char** out_json);
SCSEG_API scseg_status scseg_config_save(const scseg_config* cfg, const char* path);

/* ---- recalibration accounting ------------------------------------------- */

/* Learnable scalars one block adds for `variant` in {none,cse,sse,scse}. */
SCSEG_API scseg_status scseg_se_param_count(const char* variant, int64_t channels,
                                            int64_t reduction, int64_t* out_count);

/* Sum of scseg_se_param_count over a list of block channel counts. */
SCSEG_API scseg_status scseg_network_se_overhead(const int64_t* channels, size_t num_blocks,
                                                 const char* variant, int64_t reduction,
                                                 int64_t* out_count);

/* ---- commands ------------------------------------------------------------ */

/* Finite-difference gradient verification. block is one of
 * cse|sse|scse|conv|loss-ce|loss-dice|net. out_pass is 1 when every group
 * meets its tolerance (1e-5 for blocks, 1e-4 for whole networks). eps <= 0
 * selects the per-block default step (1e-5, end-to-end 1e-6). */
SCSEG_API scseg_status scseg_gradcheck(const char* block, double eps, uint64_t seed,
                                       int* out_pass, char** out_report);

/* Vanilla parameter count, per-block recalibration overhead, percentage. */
SCSEG_API scseg_status scseg_paramcount(const scseg_config* cfg, char** out_report);

/* Trains per the config. Writes checkpoint.setf, train_log.csv and
 * run_manifest.json under output.dir; the dataset is loaded from the data
 * directory or generated there on demand. */
SCSEG_API scseg_status scseg_train(const scseg_config* cfg, char** out_report);

/* Evaluates a checkpoint on a split (train|val|test). Writes
 * eval_summary.txt, eval_per_class.csv, eval_matrix.csv under output.dir. */
SCSEG_API scseg_status scseg_eval(const scseg_config* cfg, const char* checkpoint,
                                  const char* split, char** out_report);

/* Trains and evaluates every (architecture, variant) pair on a shared
 * dataset, writing ablation_grid.csv / ablation_details.csv /
 * ablation_timings.csv. Cell failures are isolated and reported via
 * SCSEG_ERROR. SCSE_THREADS caps cell parallelism (default 1). */
SCSEG_API scseg_status scseg_ablate(const scseg_config* cfg, const char* archs_csv,
                                    const char* variants_csv, char** out_report);

#ifdef __cplusplus
}
#endif

#endif /* SCSEG_H */
