#include "se_blocks.hpp"

#include <cmath>

#include "errors.hpp"

namespace scseg {

const char* to_string(SEVariant v) {
    switch (v) {
        case SEVariant::none: return "none";
        case SEVariant::cse: return "cse";
        case SEVariant::sse: return "sse";
        case SEVariant::scse: return "scse";
    }
    return "none";
}

SEVariant se_variant_from_string(const std::string& s) {
    if (s == "none") return SEVariant::none;
    if (s == "cse") return SEVariant::cse;
    if (s == "sse") return SEVariant::sse;
    if (s == "scse") return SEVariant::scse;
    throw ConfigError("unknown se variant '" + s + "' (expected none|cse|sse|scse)");
}

namespace {

void check_cr(int64_t channels, int64_t reduction) {
    if (reduction < 1)
        throw ConfigError("se block: reduction must be >= 1, got " + std::to_string(reduction));
    if (channels < reduction)
        throw ConfigError("se block: channels (" + std::to_string(channels) +
                          ") must be >= reduction (" + std::to_string(reduction) + ")");
}

Tensor glorot(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

} // namespace

int64_t se_param_count(SEVariant variant, int64_t channels, int64_t reduction) {
    check_cr(channels, reduction);
    const int64_t reduced = channels / reduction;
    switch (variant) {
        case SEVariant::none: return 0;
        case SEVariant::cse: return 2 * channels * reduced;
        case SEVariant::sse: return channels;
        case SEVariant::scse: return 2 * channels * reduced + channels;
    }
    return 0;
}

int64_t network_se_overhead(const std::vector<int64_t>& block_channels, SEVariant variant,
                            int64_t reduction) {
    int64_t total = 0;
    for (int64_t c : block_channels) total += se_param_count(variant, c, reduction);
    return total;
}

SEParams SEParams::zeros(SEVariant v, int64_t channels, int64_t reduction) {
    check_cr(channels, reduction);
    SEParams p;
    p.variant = v;
    p.channels = channels;
    p.reduction = reduction;
    const int64_t reduced = channels / reduction;
    if (v == SEVariant::cse || v == SEVariant::scse) {
        p.w_reduce = Tensor({reduced, channels});
        p.w_expand = Tensor({channels, reduced});
    }
    if (v == SEVariant::sse || v == SEVariant::scse) p.w_spatial = Tensor({1, channels, 1, 1});
    return p;
}

SEParams SEParams::init(SEVariant v, int64_t channels, int64_t reduction, uint64_t seed) {
    SEParams p = zeros(v, channels, reduction);
    const int64_t reduced = channels / reduction;
    if (v == SEVariant::cse || v == SEVariant::scse) {
        p.w_reduce = glorot({reduced, channels}, channels, reduced, mix_seed(seed, "w_reduce"));
        p.w_expand = glorot({channels, reduced}, reduced, channels, mix_seed(seed, "w_expand"));
    }
    if (v == SEVariant::sse || v == SEVariant::scse)
        p.w_spatial = glorot({1, channels, 1, 1}, channels, 1, mix_seed(seed, "w_spatial"));
    return p;
}

int64_t SEParams::param_count() const {
    return w_reduce.numel() + w_expand.numel() + w_spatial.numel();
}

// ---- graph builders ----------------------------------------------------------

ad::Var channel_squeeze(const ad::Var& u) { return ad::channel_mean(u); }

ad::Var cse_forward(const ad::Var& u, const ad::Var& w_reduce, const ad::Var& w_expand) {
    ad::Var z = channel_squeeze(u);                                     // [N,C]
    ad::Var hidden = ad::relu(ad::fully_connected(z, w_reduce, {}));    // [N,C/r]
    ad::Var zhat = ad::fully_connected(hidden, w_expand, {});           // [N,C]
    return ad::scale_channels(u, ad::sigmoid(zhat));
}

ad::Var sse_forward(const ad::Var& u, const ad::Var& w_spatial) {
    ad::Var q = ad::conv2d(u, w_spatial, {}, 1, 0); // [N,1,H,W]
    return ad::scale_spatial(u, ad::sigmoid(q));
}

ad::Var scse_forward(const ad::Var& u, const ad::Var& w_reduce, const ad::Var& w_expand,
                     const ad::Var& w_spatial) {
    return ad::add(cse_forward(u, w_reduce, w_expand), sse_forward(u, w_spatial));
}

namespace {

void check_block_input(const ad::Var& u, const SEParams& p, const char* op) {
    const Tensor& x = u.value();
    if (x.rank() != 4)
        throw ShapeError(std::string(op) + ": input must be rank 4, got " +
                         shape_to_string(x.shape()));
    if (x.extent(1) != p.channels)
        throw ShapeError(std::string(op) + ": block built for " + std::to_string(p.channels) +
                         " channels, input has " + std::to_string(x.extent(1)));
}

} // namespace

SEApplied apply_se(const ad::Var& u, const SEParams& p) {
    switch (p.variant) {
        case SEVariant::none:
            return {u, {}};
        case SEVariant::cse: {
            check_block_input(u, p, "cse_forward");
            ad::Var wr = ad::Var::param(p.w_reduce);
            ad::Var we = ad::Var::param(p.w_expand);
            return {cse_forward(u, wr, we), {wr, we}};
        }
        case SEVariant::sse: {
            check_block_input(u, p, "sse_forward");
            ad::Var ws = ad::Var::param(p.w_spatial);
            return {sse_forward(u, ws), {ws}};
        }
        case SEVariant::scse: {
            check_block_input(u, p, "scse_forward");
            ad::Var wr = ad::Var::param(p.w_reduce);
            ad::Var we = ad::Var::param(p.w_expand);
            ad::Var ws = ad::Var::param(p.w_spatial);
            return {scse_forward(u, wr, we, ws), {wr, we, ws}};
        }
    }
    return {u, {}};
}

// ---- value-level conveniences ---------------------------------------------------

Tensor cse_forward(const Tensor& u, const SEParams& p) {
    if (p.variant != SEVariant::cse && p.variant != SEVariant::scse)
        throw ShapeError("cse_forward: params do not carry channel-excitation weights");
    ad::Var uv = ad::Var::constant(u);
    check_block_input(uv, p, "cse_forward");
    return cse_forward(uv, ad::Var::constant(p.w_reduce), ad::Var::constant(p.w_expand)).value();
}

Tensor sse_forward(const Tensor& u, const SEParams& p) {
    if (p.variant != SEVariant::sse && p.variant != SEVariant::scse)
        throw ShapeError("sse_forward: params do not carry spatial-excitation weights");
    ad::Var uv = ad::Var::constant(u);
    check_block_input(uv, p, "sse_forward");
    return sse_forward(uv, ad::Var::constant(p.w_spatial)).value();
}

Tensor scse_forward(const Tensor& u, const SEParams& p_c, const SEParams& p_s) {
    if (p_c.variant != SEVariant::cse)
        throw ShapeError("scse_forward: first params must be a cse block");
    if (p_s.variant != SEVariant::sse)
        throw ShapeError("scse_forward: second params must be a sse block");
    if (p_c.channels != p_s.channels)
        throw ShapeError("scse_forward: channel counts differ");
    ad::Var uv = ad::Var::constant(u);
    check_block_input(uv, p_c, "scse_forward");
    return scse_forward(uv, ad::Var::constant(p_c.w_reduce), ad::Var::constant(p_c.w_expand),
                        ad::Var::constant(p_s.w_spatial))
        .value();
}

} // namespace scseg
