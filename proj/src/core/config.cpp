#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace scseg {

using nlohmann::json;

std::string RunConfig::resolved_data_dir() const {
    return output.data_dir.empty() ? output.dir + "/dataset" : output.data_dir;
}

void RunConfig::validate_for_data() const {
    arch.validate();
    train.validate();
    data.validate();
    if (arch.num_classes != data.num_classes)
        throw ConfigError("config: arch.num_classes (" + std::to_string(arch.num_classes) +
                          ") differs from data.num_classes (" + std::to_string(data.num_classes) +
                          ")");
}

namespace {

// Whitelist-checked view over one config section.
class Section {
public:
    Section(const json& root, const std::string& name) : name_(name) {
        if (root.contains(name)) {
            const json& s = root.at(name);
            if (!s.is_object())
                throw ConfigError("config: '" + name + "' must be an object");
            obj_ = &s;
        }
    }

    bool has(const char* key) const { return obj_ && obj_->contains(key); }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!has(key)) return;
        try {
            out = obj_->at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + name_ + "." + key + "'");
        }
    }

    void read_string(const char* key, std::string& out) { read<std::string>(key, out); }

    void finish() const {
        if (!obj_) return;
        for (auto it = obj_->begin(); it != obj_->end(); ++it) {
            if (!seen_.count(it.key()))
                throw ConfigError("config: unknown key '" + name_ + "." + it.key() + "'");
        }
    }

private:
    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> seen_;
};

} // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: document must be a JSON object");
    static const std::set<std::string> top{"arch", "train", "data", "output"};
    for (auto it = root.begin(); it != root.end(); ++it)
        if (!top.count(it.key()))
            throw ConfigError("config: unknown top-level key '" + it.key() + "'");

    RunConfig cfg;

    {
        Section s(root, "data");
        s.read("num_train", cfg.data.num_train);
        s.read("num_val", cfg.data.num_val);
        s.read("num_test", cfg.data.num_test);
        s.read("image_size", cfg.data.image_size);
        s.read("num_classes", cfg.data.num_classes);
        s.read("shapes_min", cfg.data.shapes_min);
        s.read("shapes_max", cfg.data.shapes_max);
        s.read("intensity_separation", cfg.data.intensity_separation);
        s.read("noise_std", cfg.data.noise_std);
        s.read("class_size_skew", cfg.data.class_size_skew);
        s.read("label_corruption", cfg.data.label_corruption);
        s.read("seed", cfg.data.seed);
        s.finish();
    }

    {
        Section s(root, "arch");
        std::string preset;
        s.read_string("preset", preset);
        if (!preset.empty()) {
            if (preset == "desk") cfg.arch = ArchSpec::desk();
            else if (preset == "full") cfg.arch = ArchSpec::full_scale();
            else throw ConfigError("config: unknown arch.preset '" + preset + "'");
        } else {
            // Class count follows the dataset unless stated explicitly.
            cfg.arch.num_classes = cfg.data.num_classes;
        }
        std::string kind, variant;
        s.read_string("kind", kind);
        if (!kind.empty()) cfg.arch.kind = arch_kind_from_string(kind);
        s.read_string("se_variant", variant);
        if (!variant.empty()) cfg.arch.se_variant = se_variant_from_string(variant);
        std::vector<int64_t> channels;
        s.read("block_channels", channels);
        if (s.has("block_channels")) {
            if (channels.size() != 4)
                throw ConfigError("config: arch.block_channels must list exactly 4 values");
            std::copy(channels.begin(), channels.end(), cfg.arch.block_channels.begin());
        }
        s.read("bottleneck_channels", cfg.arch.bottleneck_channels);
        s.read("num_classes", cfg.arch.num_classes);
        s.read("se_reduction", cfg.arch.se_reduction);
        s.read("input_channels", cfg.arch.input_channels);
        s.read("conv_kernel", cfg.arch.conv_kernel);
        s.read("convs_per_block", cfg.arch.convs_per_block);
        s.read("se_zero_init", cfg.arch.se_zero_init);
        s.finish();
        cfg.arch.preset = preset;
    }

    {
        Section s(root, "train");
        s.read("initial_lr", cfg.train.initial_lr);
        s.read("lr_decay_factor", cfg.train.lr_decay_factor);
        s.read("lr_decay_every", cfg.train.lr_decay_every);
        s.read("momentum", cfg.train.momentum);
        s.read("weight_decay", cfg.train.weight_decay);
        s.read("batch_size", cfg.train.batch_size);
        s.read("max_epochs", cfg.train.max_epochs);
        s.read("patience", cfg.train.patience);
        s.read("loss_mix", cfg.train.loss_mix);
        s.read("seed", cfg.train.seed);
        s.finish();
    }

    {
        Section s(root, "output");
        s.read_string("dir", cfg.output.dir);
        s.read_string("data_dir", cfg.output.data_dir);
        s.read("exclude_background", cfg.output.exclude_background);
        s.finish();
    }

    cfg.arch.validate();
    cfg.train.validate();
    cfg.data.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json root;
    json& a = root["arch"];
    a["kind"] = to_string(cfg.arch.kind);
    a["block_channels"] = cfg.arch.block_channels;
    a["bottleneck_channels"] = cfg.arch.bottleneck_channels;
    a["num_classes"] = cfg.arch.num_classes;
    a["se_variant"] = to_string(cfg.arch.se_variant);
    a["se_reduction"] = cfg.arch.se_reduction;
    a["input_channels"] = cfg.arch.input_channels;
    a["conv_kernel"] = cfg.arch.conv_kernel;
    a["convs_per_block"] = cfg.arch.convs_per_block;
    a["se_zero_init"] = cfg.arch.se_zero_init;
    if (!cfg.arch.preset.empty()) a["preset"] = cfg.arch.preset;

    json& t = root["train"];
    t["initial_lr"] = cfg.train.initial_lr;
    t["lr_decay_factor"] = cfg.train.lr_decay_factor;
    t["lr_decay_every"] = cfg.train.lr_decay_every;
    t["momentum"] = cfg.train.momentum;
    t["weight_decay"] = cfg.train.weight_decay;
    t["batch_size"] = cfg.train.batch_size;
    t["max_epochs"] = cfg.train.max_epochs;
    t["patience"] = cfg.train.patience;
    t["loss_mix"] = cfg.train.loss_mix;
    t["seed"] = cfg.train.seed;

    json& d = root["data"];
    d["num_train"] = cfg.data.num_train;
    d["num_val"] = cfg.data.num_val;
    d["num_test"] = cfg.data.num_test;
    d["image_size"] = cfg.data.image_size;
    d["num_classes"] = cfg.data.num_classes;
    d["shapes_min"] = cfg.data.shapes_min;
    d["shapes_max"] = cfg.data.shapes_max;
    d["intensity_separation"] = cfg.data.intensity_separation;
    d["noise_std"] = cfg.data.noise_std;
    d["class_size_skew"] = cfg.data.class_size_skew;
    d["label_corruption"] = cfg.data.label_corruption;
    d["seed"] = cfg.data.seed;

    json& o = root["output"];
    o["dir"] = cfg.output.dir;
    if (!cfg.output.data_dir.empty()) o["data_dir"] = cfg.output.data_dir;
    o["exclude_background"] = cfg.output.exclude_background;

    return root.dump(2) + "\n";
}

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const size_t dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
        throw ConfigError("config: override key must look like 'section.name', got '" + key +
                          "'");
    json root = json::parse(run_config_to_json(cfg));
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value; // bare strings (unet, scse, paths, ...)
    }
    if (key == "arch.preset") {
        // Selecting a preset replaces the whole arch section; later overrides
        // can still adjust individual fields.
        root["arch"] = json{{"preset", parsed}};
    } else {
        root[key.substr(0, dot)][key.substr(dot + 1)] = parsed;
    }
    cfg = parse_run_config(root.dump());
}

std::string get_config_key(const RunConfig& cfg, const std::string& key) {
    const size_t dot = key.find('.');
    if (dot == std::string::npos)
        throw ConfigError("config: key must look like 'section.name', got '" + key + "'");
    const json root = json::parse(run_config_to_json(cfg));
    const std::string sec = key.substr(0, dot), name = key.substr(dot + 1);
    if (!root.contains(sec) || !root.at(sec).contains(name))
        throw ConfigError("config: no key '" + key + "'");
    const json& v = root.at(sec).at(name);
    return v.is_string() ? v.get<std::string>() : v.dump();
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(run_config_to_json(cfg)); }

} // namespace scseg
