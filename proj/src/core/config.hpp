#pragma once

#include <cstdint>
#include <string>

#include "network.hpp"
#include "synthetic.hpp"
#include "training.hpp"

namespace scseg {

struct OutputConfig {
    std::string dir = "out";
    std::string data_dir;            // empty -> <dir>/dataset
    bool exclude_background = true;  // for reported Dice means
};

// One document drives every command. Serialized as JSON with exactly four
// top-level keys (arch, train, data, output); unknown keys anywhere are
// rejected. Defaults reproduce the standard training recipe (lr 0.01 decayed
// by 10x every 10 epochs, momentum 0.95, weight decay 1e-4, batch size 4).
struct RunConfig {
    ArchSpec arch;
    TrainConfig train;
    DatasetSpec data;
    OutputConfig output;

    std::string resolved_data_dir() const;
    // Cross-field checks needed before touching data (class counts agree).
    void validate_for_data() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

// Dotted-path override, e.g. set_config_key(cfg, "train.batch_size", "8").
// The value is parsed as JSON when possible, else taken as a string.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_key(const RunConfig& cfg, const std::string& key);

uint64_t config_hash(const RunConfig& cfg);

} // namespace scseg
