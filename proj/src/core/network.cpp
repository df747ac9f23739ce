#include "network.hpp"

#include <cmath>
#include <unordered_map>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor_file.hpp"

namespace scseg {

const char* to_string(ArchKind k) {
    switch (k) {
        case ArchKind::unet: return "unet";
        case ArchKind::sdnet: return "sdnet";
        case ArchKind::densenet: return "densenet";
    }
    return "unet";
}

ArchKind arch_kind_from_string(const std::string& s) {
    if (s == "unet") return ArchKind::unet;
    if (s == "sdnet") return ArchKind::sdnet;
    if (s == "densenet") return ArchKind::densenet;
    throw ConfigError("unknown architecture '" + s + "' (expected unet|sdnet|densenet)");
}

void ArchSpec::validate() const {
    for (int64_t c : block_channels)
        if (c < 1) throw ConfigError("arch: block channels must be >= 1");
    if (bottleneck_channels < 1) throw ConfigError("arch: bottleneck_channels must be >= 1");
    if (num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
    if (input_channels < 1) throw ConfigError("arch: input_channels must be >= 1");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
        throw ConfigError("arch: conv_kernel must be odd and >= 1, got " +
                          std::to_string(conv_kernel));
    if (convs_per_block < 1) throw ConfigError("arch: convs_per_block must be >= 1");
    if (se_reduction < 1) throw ConfigError("arch: se_reduction must be >= 1");
    if (se_variant == SEVariant::cse || se_variant == SEVariant::scse) {
        for (int64_t c : block_channels) {
            if (c < se_reduction)
                throw ConfigError("arch: block channels must be >= se_reduction for channel "
                                  "excitation, got " +
                                  std::to_string(c));
            if (se_reduction == 2 && c % 2 != 0)
                throw ConfigError("arch: block channels must be even when se_reduction is 2, "
                                  "got " +
                                  std::to_string(c));
        }
    }
}

ArchSpec ArchSpec::desk(ArchKind kind, SEVariant se) {
    ArchSpec s;
    s.kind = kind;
    s.block_channels = {8, 16, 32, 64};
    s.bottleneck_channels = 64;
    s.num_classes = 4;
    s.se_variant = se;
    s.conv_kernel = 3;
    s.preset = "desk";
    return s;
}

ArchSpec ArchSpec::full_scale(ArchKind kind, SEVariant se) {
    ArchSpec s;
    s.kind = kind;
    s.block_channels = {64, 64, 64, 64};
    s.bottleneck_channels = 64;
    s.num_classes = 28;
    s.se_variant = se;
    s.conv_kernel = 5;
    s.preset = "full";
    return s;
}

std::vector<int64_t> ArchSpec::se_site_channels() const {
    std::vector<int64_t> c(block_channels.begin(), block_channels.end());
    for (int i = 3; i >= 0; --i) c.push_back(block_channels[size_t(i)]);
    return c;
}

namespace {

// Runs the network topology once. In build mode it creates and initializes
// every parameter tensor; in replay mode it serves the stored tensors back in
// the identical order. Writing the topology once keeps the two in lockstep.
struct Trace {
    const ArchSpec& spec;
    uint64_t seed = 0;
    std::vector<Parameter>* create = nullptr;       // build mode
    const std::vector<Parameter>* replay = nullptr; // forward mode
    size_t cursor = 0;
    std::vector<ad::Var> taken;
    const std::vector<IntTensor>* pinned_routing = nullptr;
    std::vector<IntTensor> routing;

    ad::Var take(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                 int64_t fan_out, bool zero_init) {
        if (create) {
            Tensor t(shape);
            if (!zero_init) {
                // He-style bound: keeps activation variance roughly constant
                // through relu convolutions. There are no normalization
                // layers, so a fan-sum bound decays activations by ~0.7 per
                // conv and starves the deep decoders.
                Rng rng(mix_seed(seed, name));
                const double bound = std::sqrt(6.0 / double(fan_in));
                for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
            }
            create->push_back({name, std::move(t)});
            return ad::Var::param(create->back().value);
        }
        if (cursor >= replay->size() || (*replay)[cursor].name != name ||
            (*replay)[cursor].value.shape() != shape)
            throw ShapeError("network parameters out of sync at '" + name + "'");
        ad::Var v = ad::Var::param((*replay)[cursor].value);
        ++cursor;
        taken.push_back(v);
        return v;
    }

    // fan_in_scale discounts structurally sparse inputs (unpooled maps are
    // three-quarters zeros) so the effective fan-in matches the live inputs.
    ad::Var conv(const ad::Var& x, const std::string& name, int64_t out_ch, int64_t kernel,
                 bool with_relu, double fan_in_scale = 1.0) {
        const int64_t in_ch = x.value().extent(1);
        const int64_t fan_in =
            std::max<int64_t>(1, llround(double(in_ch * kernel * kernel) * fan_in_scale));
        ad::Var w = take(name + ".w", {out_ch, in_ch, kernel, kernel}, fan_in,
                         out_ch * kernel * kernel, false);
        ad::Var b = take(name + ".b", {out_ch}, 0, 0, true); // biases start at zero
        ad::Var y = ad::conv2d(x, w, b, 1, kernel / 2);
        return with_relu ? ad::relu(y) : y;
    }

    // Plain stack: first conv maps the incoming channels to out_ch.
    ad::Var conv_stack(ad::Var h, const std::string& block, int64_t out_ch,
                       double first_fan_in_scale = 1.0) {
        for (int64_t j = 1; j <= spec.convs_per_block; ++j)
            h = conv(h, block + ".conv" + std::to_string(j), out_ch, spec.conv_kernel, true,
                     j == 1 ? first_fan_in_scale : 1.0);
        return h;
    }

    // Dense stack: each conv consumes the concatenation of the block input and
    // all previous conv outputs; a 1x1 transition maps the full concatenation
    // back to out_ch.
    ad::Var dense_stack(ad::Var h, const std::string& block, int64_t out_ch) {
        ad::Var cat = h;
        for (int64_t j = 1; j <= spec.convs_per_block; ++j) {
            ad::Var y = conv(cat, block + ".conv" + std::to_string(j), out_ch, spec.conv_kernel,
                             true);
            cat = ad::concat_channels(cat, y);
        }
        return conv(cat, block + ".transition", out_ch, 1, true);
    }

    ad::Var block(ad::Var h, const std::string& name, int64_t out_ch) {
        return spec.kind == ArchKind::densenet ? dense_stack(h, name, out_ch)
                                               : conv_stack(h, name, out_ch);
    }

    ad::Var se(ad::Var h, const std::string& block_name, int64_t channels) {
        const SEVariant v = spec.se_variant;
        if (v == SEVariant::none) return h;
        const int64_t reduced = channels / spec.se_reduction;
        const bool zero = spec.se_zero_init;
        ad::Var out = h;
        if (v == SEVariant::cse || v == SEVariant::scse) {
            ad::Var wr = take(block_name + ".se.w_reduce", {reduced, channels}, channels, reduced,
                              zero);
            ad::Var we = take(block_name + ".se.w_expand", {channels, reduced}, reduced, channels,
                              zero);
            if (v == SEVariant::cse) return cse_forward(h, wr, we);
            ad::Var ws = take(block_name + ".se.w_spatial", {1, channels, 1, 1}, channels, 1, zero);
            return scse_forward(h, wr, we, ws);
        }
        ad::Var ws = take(block_name + ".se.w_spatial", {1, channels, 1, 1}, channels, 1, zero);
        return sse_forward(h, ws);
    }

    ad::Var run(const Tensor& batch) {
        ad::Var h = ad::Var::constant(batch);
        std::array<ad::Var, 4> skips;
        std::array<IntTensor, 4> pool_idx;
        for (int i = 0; i < 4; ++i) {
            const std::string name = "enc" + std::to_string(i + 1);
            const int64_t c = spec.block_channels[size_t(i)];
            h = block(h, name, c);
            h = se(h, name, c); // recalibrated map feeds both the pool and the skip route
            skips[size_t(i)] = h;
            if (pinned_routing) {
                pool_idx[size_t(i)] = (*pinned_routing)[size_t(i)];
                h = ad::max_pool2d_pinned(h, pool_idx[size_t(i)], 2);
            } else {
                auto pooled = ad::max_pool2d(h, 2);
                h = pooled.first;
                pool_idx[size_t(i)] = pooled.second;
            }
            routing.push_back(pool_idx[size_t(i)]);
        }
        h = block(h, "bottleneck", spec.bottleneck_channels);
        for (int i = 3; i >= 0; --i) {
            const std::string name = "dec" + std::to_string(i + 1);
            const int64_t c = spec.block_channels[size_t(i)];
            if (spec.kind == ArchKind::sdnet) {
                // Skip-deconv decoding: a linear channel projection so the
                // unpool matches the recorded indices, unpooling to the
                // argmax positions, then convolutions over the unpooled map
                // concatenated with the matching encoder output.
                h = conv(h, name + ".proj", c, 1, false);
                h = ad::max_unpool2d(h, pool_idx[size_t(i)], 2);
                h = ad::concat_channels(h, skips[size_t(i)]);
                h = conv_stack(h, name, c);
            } else {
                h = ad::upsample_nearest(h, 2);
                h = ad::concat_channels(h, skips[size_t(i)]);
                h = block(h, name, c);
            }
            h = se(h, name, c);
        }
        return classifier(h);
    }

    // Zero-initialized head: logits start at zero (uniform softmax), so the
    // early gradients into the trunk are well-scaled instead of fighting a
    // random classification.
    ad::Var classifier(const ad::Var& h) {
        const int64_t in_ch = h.value().extent(1);
        ad::Var w = take("classifier.w", {spec.num_classes, in_ch, 1, 1}, 0, 0, true);
        ad::Var b = take("classifier.b", {spec.num_classes}, 0, 0, true);
        return ad::conv2d(h, w, b, 1, 0);
    }
};

} // namespace

Network Network::build(const ArchSpec& spec, uint64_t seed) {
    spec.validate();
    Network net;
    net.spec_ = spec;
    Trace tr{spec, seed, &net.params_, nullptr};
    // A minimal dummy pass creates the parameters and checks the topology
    // (shape preservation at every recalibration site included).
    Tensor dummy({1, spec.input_channels, 16, 16});
    tr.run(dummy);
    return net;
}

int64_t Network::param_count() const {
    int64_t total = 0;
    for (const Parameter& p : params_) total += p.value.numel();
    return total;
}

std::vector<std::pair<std::string, int64_t>> Network::param_breakdown() const {
    std::vector<std::pair<std::string, int64_t>> rows;
    rows.reserve(params_.size());
    for (const Parameter& p : params_) rows.emplace_back(p.name, p.value.numel());
    return rows;
}

Network::Forward Network::forward(const Tensor& batch,
                                  const std::vector<IntTensor>* pinned_routing) const {
    if (batch.rank() != 4)
        throw ShapeError("forward: batch must be rank 4, got " + shape_to_string(batch.shape()));
    if (batch.extent(1) != spec_.input_channels)
        throw ShapeError("forward: batch has " + std::to_string(batch.extent(1)) +
                         " channels, network expects " + std::to_string(spec_.input_channels));
    if (batch.extent(2) % 16 != 0 || batch.extent(3) % 16 != 0)
        throw ShapeError("forward: spatial extents must be divisible by 16 (four 2x poolings), "
                         "got " +
                         std::to_string(batch.extent(2)) + "x" + std::to_string(batch.extent(3)));
    if (pinned_routing && pinned_routing->size() != 4)
        throw ShapeError("forward: pinned routing must cover the 4 encoder poolings");
    Trace tr{spec_, 0, nullptr, &params_};
    tr.pinned_routing = pinned_routing;
    ad::Var logits = tr.run(batch);
    if (tr.cursor != params_.size()) throw ShapeError("forward: unconsumed network parameters");
    return {logits, std::move(tr.taken), std::move(tr.routing)};
}

Tensor Network::forward_values(const Tensor& batch,
                               const std::vector<IntTensor>* pinned_routing) const {
    return forward(batch, pinned_routing).logits.value();
}

void Network::load_parameters(const std::vector<Parameter>& loaded) {
    std::unordered_map<std::string, const Parameter*> byname;
    for (const Parameter& p : loaded) {
        if (!byname.emplace(p.name, &p).second)
            throw ShapeError("duplicate parameter '" + p.name + "'");
    }
    for (Parameter& p : params_) {
        auto it = byname.find(p.name);
        if (it == byname.end()) throw ShapeError("missing parameter '" + p.name + "'");
        if (it->second->value.shape() != p.value.shape())
            throw ShapeError("parameter '" + p.name + "' has shape " +
                             shape_to_string(it->second->value.shape()) + ", expected " +
                             shape_to_string(p.value.shape()));
        p.value = it->second->value;
        byname.erase(it);
    }
    if (!byname.empty())
        throw ShapeError("unexpected parameter '" + byname.begin()->first + "'");
}

void save_network_params(const std::string& path, const Network& net) {
    std::vector<TensorFileEntry> entries;
    entries.reserve(net.params().size());
    for (const Parameter& p : net.params()) entries.push_back({p.name, p.value});
    write_tensor_file(path, entries);
}

void load_network_params(const std::string& path, Network& net) {
    std::vector<Parameter> loaded;
    for (TensorFileEntry& e : read_tensor_file(path)) {
        Tensor* t = std::get_if<Tensor>(&e.value);
        if (!t)
            throw ShapeError("checkpoint '" + path + "': entry '" + e.name +
                             "' is not a float tensor");
        loaded.push_back({e.name, std::move(*t)});
    }
    net.load_parameters(loaded);
}

} // namespace scseg
