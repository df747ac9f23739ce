#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace scseg {

enum class SEVariant { none, cse, sse, scse };

const char* to_string(SEVariant v);
SEVariant se_variant_from_string(const std::string& s); // throws ConfigError

// Learnable weights of one recalibration block. Only the tensors the variant
// needs are allocated; none of them carry bias terms, so the realized scalar
// count is exactly se_param_count(variant, C, r).
struct SEParams {
    SEVariant variant = SEVariant::none;
    int64_t channels = 0;
    int64_t reduction = 2;

    Tensor w_reduce;  // [C/r, C]     channel squeeze FC
    Tensor w_expand;  // [C, C/r]     channel excite FC
    Tensor w_spatial; // [1, C, 1, 1] 1x1 spatial-squeeze conv

    // Zero-initialized weights (all gates sit at 0.5; scSE is the identity).
    static SEParams zeros(SEVariant v, int64_t channels, int64_t reduction);
    // Seeded uniform initialization (same scheme as the conv layers).
    static SEParams init(SEVariant v, int64_t channels, int64_t reduction, uint64_t seed);

    int64_t param_count() const; // realized scalar count
};

// Number of learnable scalars one block adds: none -> 0, cse -> 2*C*floor(C/r)
// (C^2 when r=2 and C even), sse -> C, scse -> sum of both.
int64_t se_param_count(SEVariant variant, int64_t channels, int64_t reduction);

// Total overhead of inserting one block after each of the given
// encoder/decoder outputs: sum of se_param_count over the channel list.
int64_t network_se_overhead(const std::vector<int64_t>& block_channels, SEVariant variant,
                            int64_t reduction);

// ---- graph builders ----------------------------------------------------------

// Global-average squeeze: [N,C,H,W] -> [N,C], z_k = mean over the spatial plane.
ad::Var channel_squeeze(const ad::Var& u);

// Channel excitation: sigmoid(w_expand * relu(w_reduce * z)) gates each channel.
ad::Var cse_forward(const ad::Var& u, const ad::Var& w_reduce, const ad::Var& w_expand);

// Spatial excitation: a 1x1 single-output convolution squeezes the channels,
// and sigmoid of that projection gates each pixel.
ad::Var sse_forward(const ad::Var& u, const ad::Var& w_spatial);

// Concurrent block: elementwise sum of the channel and spatial excitations.
ad::Var scse_forward(const ad::Var& u, const ad::Var& w_reduce, const ad::Var& w_expand,
                     const ad::Var& w_spatial);

// Applies the block described by params, exposing the weight leaves so callers
// can reach their gradients. For variant none, out == u and weights is empty.
struct SEApplied {
    ad::Var out;
    std::vector<ad::Var> weights; // cse: {w_reduce, w_expand}; sse: {w_spatial}; scse: all three
};
SEApplied apply_se(const ad::Var& u, const SEParams& p);

// ---- value-level conveniences (no gradients) ----------------------------------

Tensor cse_forward(const Tensor& u, const SEParams& p);
Tensor sse_forward(const Tensor& u, const SEParams& p);
Tensor scse_forward(const Tensor& u, const SEParams& p_c, const SEParams& p_s);

} // namespace scseg
