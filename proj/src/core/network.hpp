#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "se_blocks.hpp"
#include "tensor.hpp"

namespace scseg {

enum class ArchKind { unet, sdnet, densenet };

const char* to_string(ArchKind k);
ArchKind arch_kind_from_string(const std::string& s); // throws ConfigError

// Declarative description of one encoder/decoder segmentation network:
// 4 encoder blocks, a bottleneck, 4 mirrored decoder blocks and a 1x1
// classifier. Optional recalibration block after every encoder/decoder block
// (the bottleneck gets none).
struct ArchSpec {
    ArchKind kind = ArchKind::unet;
    std::array<int64_t, 4> block_channels{12, 16, 32, 64};
    int64_t bottleneck_channels = 64;
    int64_t num_classes = 4;
    SEVariant se_variant = SEVariant::none;
    int64_t se_reduction = 2;
    int64_t input_channels = 1;
    int64_t conv_kernel = 3;
    int64_t convs_per_block = 2;
    bool se_zero_init = false;
    std::string preset; // optional name, informational

    void validate() const; // throws ConfigError

    // Small configuration used for fast desk experiments (3x3 convs,
    // channels 8/16/32/64, 4 classes).
    static ArchSpec desk(ArchKind kind = ArchKind::unet, SEVariant se = SEVariant::none);
    // Full-width configuration (5x5 convs, 64 channels everywhere, 28 classes)
    // used for the parameter-count accounting.
    static ArchSpec full_scale(ArchKind kind = ArchKind::unet, SEVariant se = SEVariant::none);

    // Output channel counts of the 8 encoder/decoder blocks in forward order
    // (the recalibration insertion sites).
    std::vector<int64_t> se_site_channels() const;
};

struct Parameter {
    std::string name;
    Tensor value;
};

// Realized parameterization of one ArchSpec. Parameters are stored in a fixed
// order (network traversal order); a forward pass consumes them in that same
// order, so parameter indices line up between params(), Forward::param_vars
// and the optimizer state.
class Network {
public:
    // Deterministic for fixed (spec, seed): every tensor is initialized from a
    // stream seeded by hash(seed, parameter name), so shared layers receive
    // identical values across variants of the same seed.
    static Network build(const ArchSpec& spec, uint64_t seed);

    const ArchSpec& spec() const { return spec_; }
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }

    int64_t param_count() const;
    std::vector<std::pair<std::string, int64_t>> param_breakdown() const;

    struct Forward {
        ad::Var logits;                      // [N,K,H,W]
        std::vector<ad::Var> param_vars;     // aligned with params()
        std::vector<IntTensor> pool_routing; // per-encoder pooling indices
    };
    // batch [N,Cin,H,W] with H, W divisible by 16 (four 2x poolings).
    // A pinned routing (from a previous Forward on the same batch shape)
    // freezes the pooling argmax selection, which keeps the function smooth
    // around the base point for finite-difference probes.
    Forward forward(const Tensor& batch,
                    const std::vector<IntTensor>* pinned_routing = nullptr) const;
    Tensor forward_values(const Tensor& batch,
                          const std::vector<IntTensor>* pinned_routing = nullptr) const;

    // Replaces parameter tensors by name; every network parameter must be
    // present with a matching shape. Throws ShapeError naming the first
    // offending tensor.
    void load_parameters(const std::vector<Parameter>& loaded);

private:
    ArchSpec spec_;
    std::vector<Parameter> params_;
};

// Checkpoints are tensor-container files with one entry per parameter path.
void save_network_params(const std::string& path, const Network& net);
void load_network_params(const std::string& path, Network& net);

} // namespace scseg
