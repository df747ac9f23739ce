#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"
#include "metrics.hpp"

namespace scseg {

// Exit-code convention shared with the CLI: 0 success, 1 runtime/evaluation
// failure, 2 usage/config error, 3 numeric abort.
struct CommandResult {
    int status = 0;
    std::string report;
};

// Finite-difference verification of one building block
// (cse|sse|scse|conv|loss-ce|loss-dice) or of the full desk networks (net).
// Blocks must reach 1e-5 relative error, end-to-end networks 1e-4.
CommandResult run_gradcheck(const std::string& block, double eps, uint64_t seed);

// Parameter accounting: vanilla count, recalibration overhead per block and
// total, and the overhead percentage.
CommandResult run_paramcount(const RunConfig& cfg);

// Trains per the config; writes checkpoint.setf, train_log.csv and
// run_manifest.json under output.dir. The dataset is loaded from the data
// directory or generated (and persisted) on demand.
CommandResult run_train(const RunConfig& cfg);

// Evaluates a checkpoint on one split; writes eval_summary.txt,
// eval_per_class.csv and eval_matrix.csv under output.dir.
CommandResult run_eval(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& split);

struct AblationCell {
    std::string arch;
    std::string variant;
    bool failed = false;
    std::string error;
    double mean = 0.0;
    double stdev = 0.0;
    std::vector<double> sample_dice; // per test sample, class-mean
    int64_t overhead = 0;
    int64_t best_epoch = 0;
    int64_t epochs_run = 0;
    double p_vs_none = -1.0; // -1 when not applicable
    std::string p_method;
    double wall_seconds = 0.0;
};

struct AblationResult {
    std::vector<std::string> archs;
    std::vector<std::string> variants;
    std::vector<AblationCell> cells; // row-major over archs x variants
    std::string grid_csv;            // architectures x variants, mean±std
    std::string details_csv;
    std::string timings_csv; // wall clock; the one non-deterministic artifact
    int status = 0;

    const AblationCell& cell(const std::string& arch, const std::string& variant) const;
};

// Full grid: every (arch, variant) trained on a shared dataset with a derived
// per-cell seed, evaluated on the test split, plus Wilcoxon signed-rank
// p-values of each variant against the 'none' column. Cell failures are
// isolated (marked FAILED; overall status 1). SCSE_THREADS caps cell
// parallelism (default 1).
AblationResult run_ablation(const RunConfig& cfg, const std::vector<std::string>& archs,
                            const std::vector<std::string>& variants);

CommandResult run_ablate(const RunConfig& cfg, const std::string& archs_csv,
                         const std::string& variants_csv);

// Dataset access with on-demand generation: loads <data_dir>/{train,val,test}.setf
// when present (validating against the config), otherwise generates and
// persists them.
Dataset load_or_generate_dataset(const RunConfig& cfg);

// Evaluation helper shared by eval/ablate/acceptance.
DiceReport evaluate_network(const Network& net, const std::vector<SegmentationSample>& split,
                            int64_t num_classes, bool exclude_background, int64_t batch_size);

std::vector<std::string> split_csv_list(const std::string& csv);

} // namespace scseg
