#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "errors.hpp"
#include "metrics.hpp"

namespace scseg {

void TrainConfig::validate() const {
    if (initial_lr <= 0.0) throw ConfigError("train: initial_lr must be > 0");
    if (lr_decay_factor <= 0.0) throw ConfigError("train: lr_decay_factor must be > 0");
    if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be >= 1");
    if (momentum < 0.0) throw ConfigError("train: momentum must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
}

double TrainConfig::resolve_loss_mix(ArchKind kind) const {
    if (loss_mix >= 0.0) return loss_mix;
    return kind == ArchKind::sdnet ? 1.0 : 0.0;
}

ClassWeights median_frequency_weights(const std::vector<IntTensor>& labels, int64_t num_classes) {
    if (labels.empty()) throw ConfigError("median_frequency_weights: no label maps");
    std::vector<int64_t> counts(size_t(num_classes), 0);
    int64_t total = 0;
    for (const IntTensor& map : labels) {
        for (int64_t i = 0; i < map.numel(); ++i) {
            const uint32_t c = map[i];
            if (c >= uint32_t(num_classes))
                throw ShapeError("median_frequency_weights: label " + std::to_string(c) +
                                 " out of range for " + std::to_string(num_classes) + " classes");
            ++counts[c];
        }
        total += map.numel();
    }
    for (int64_t c = 0; c < num_classes; ++c)
        if (counts[size_t(c)] == 0)
            throw ConfigError("median_frequency_weights: class " + std::to_string(c) +
                              " never occurs, its weight is undefined");

    std::vector<double> freq(static_cast<size_t>(num_classes));
    for (int64_t c = 0; c < num_classes; ++c)
        freq[size_t(c)] = double(counts[size_t(c)]) / double(total);
    std::vector<double> sorted = freq;
    std::sort(sorted.begin(), sorted.end());
    const size_t k = sorted.size();
    const double median =
        k % 2 == 1 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);

    ClassWeights cw;
    cw.w.resize(size_t(num_classes));
    for (int64_t c = 0; c < num_classes; ++c) cw.w[size_t(c)] = median / freq[size_t(c)];
    return cw;
}

ClassWeights median_frequency_weights(const std::vector<SegmentationSample>& samples,
                                      int64_t num_classes) {
    std::vector<IntTensor> labels;
    labels.reserve(samples.size());
    for (const SegmentationSample& s : samples) labels.push_back(s.label);
    return median_frequency_weights(labels, num_classes);
}

namespace {

void check_labels(const Tensor& probs, const IntTensor& labels, int64_t K) {
    if (probs.rank() != 4)
        throw ShapeError("loss: probabilities must be rank 4, got " +
                         shape_to_string(probs.shape()));
    if (labels.rank() != 3 || labels.extent(0) != probs.extent(0) ||
        labels.extent(1) != probs.extent(2) || labels.extent(2) != probs.extent(3))
        throw ShapeError("loss: label shape " + shape_to_string(labels.shape()) +
                         " does not match logits " + shape_to_string(probs.shape()));
    for (int64_t i = 0; i < labels.numel(); ++i)
        if (labels[i] >= uint32_t(K))
            throw ShapeError("loss: label " + std::to_string(labels[i]) + " out of range for " +
                             std::to_string(K) + " classes");
}

} // namespace

ad::Var weighted_nll(const ad::Var& probs, const IntTensor& labels, const ClassWeights& w) {
    const Tensor& p = probs.value();
    const int64_t K = p.extent(1);
    check_labels(p, labels, K);
    if (int64_t(w.w.size()) != K)
        throw ShapeError("loss: " + std::to_string(w.w.size()) + " class weights for " +
                         std::to_string(K) + " classes");
    const int64_t N = p.extent(0), hw = p.extent(2) * p.extent(3);
    const int64_t pixels = N * hw;

    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        const double* pb = p.data() + n * K * hw;
        const uint32_t* lb = labels.data() + n * hw;
        for (int64_t q = 0; q < hw; ++q)
            acc += w.w[lb[q]] * -std::log(pb[int64_t(lb[q]) * hw + q]);
    }
    IntTensor lab = labels;
    std::vector<double> weights = w.w;
    return ad::make_op("weighted_nll", Tensor::scalar(acc / double(pixels)), {probs},
                       [N, K, hw, pixels, lab, weights](ad::Node& self) {
        ad::Node& pn = *self.inputs[0];
        if (!pn.requires_grad) return;
        double* dp = pn.ensure_grad().data();
        const double* pv = pn.value.data();
        const double g = self.grad[0] / double(pixels);
        for (int64_t n = 0; n < N; ++n) {
            const uint32_t* lb = lab.data() + n * hw;
            for (int64_t q = 0; q < hw; ++q) {
                const int64_t at = (n * K + int64_t(lb[q])) * hw + q;
                dp[at] -= g * weights[lb[q]] / pv[at];
            }
        }
    });
}

ad::Var weighted_logistic_loss(const ad::Var& logits, const IntTensor& labels,
                               const ClassWeights& w) {
    return weighted_nll(ad::softmax_channels(logits), labels, w);
}

ad::Var soft_dice_loss(const ad::Var& probs, const IntTensor& labels, double eps) {
    const Tensor& p = probs.value();
    const int64_t K = p.extent(1);
    check_labels(p, labels, K);
    const int64_t N = p.extent(0), hw = p.extent(2) * p.extent(3);

    // Per class: numerator 2*sum(p_c * [y=c]) + eps, denominator
    // sum(p_c) + |{y=c}| + eps, summed over every pixel of the batch.
    std::vector<double> numer(size_t(K), eps), denom(size_t(K), eps);
    for (int64_t n = 0; n < N; ++n) {
        const double* pb = p.data() + n * K * hw;
        const uint32_t* lb = labels.data() + n * hw;
        for (int64_t c = 0; c < K; ++c) {
            const double* plane = pb + c * hw;
            double inter = 0.0, psum = 0.0;
            int64_t gsum = 0;
            for (int64_t q = 0; q < hw; ++q) {
                psum += plane[q];
                const bool hit = lb[q] == uint32_t(c);
                if (hit) {
                    inter += plane[q];
                    ++gsum;
                }
            }
            numer[size_t(c)] += 2.0 * inter;
            denom[size_t(c)] += psum + double(gsum);
        }
    }
    double mean_dice = 0.0;
    for (int64_t c = 0; c < K; ++c) mean_dice += numer[size_t(c)] / denom[size_t(c)];
    mean_dice /= double(K);

    IntTensor lab = labels;
    return ad::make_op("soft_dice_loss", Tensor::scalar(1.0 - mean_dice), {probs},
                       [N, K, hw, lab, numer, denom](ad::Node& self) {
        ad::Node& pn = *self.inputs[0];
        if (!pn.requires_grad) return;
        double* dp = pn.ensure_grad().data();
        const double g = self.grad[0] / double(K);
        for (int64_t n = 0; n < N; ++n) {
            const uint32_t* lb = lab.data() + n * hw;
            for (int64_t c = 0; c < K; ++c) {
                const double nc = numer[size_t(c)], dc = denom[size_t(c)];
                double* dplane = dp + (n * K + c) * hw;
                for (int64_t q = 0; q < hw; ++q) {
                    const double ind = lb[q] == uint32_t(c) ? 1.0 : 0.0;
                    dplane[q] -= g * (2.0 * ind * dc - nc) / (dc * dc);
                }
            }
        }
    });
}

ad::Var segmentation_loss(const ad::Var& logits, const IntTensor& labels, const ClassWeights& w,
                          double dice_mix) {
    ad::Var probs = ad::softmax_channels(logits);
    ad::Var ce = weighted_nll(probs, labels, w);
    if (dice_mix == 0.0) return ce;
    return ad::add(ce, ad::scale(soft_dice_loss(probs, labels), dice_mix));
}

double lr_at_epoch(const TrainConfig& cfg, int64_t epoch) {
    return cfg.initial_lr * std::pow(cfg.lr_decay_factor, double(epoch / cfg.lr_decay_every));
}

void sgd_update(std::vector<Parameter>& params, const std::vector<Tensor>& grads,
                OptimState& state, double lr, double momentum, double weight_decay) {
    if (params.size() != grads.size())
        throw ShapeError("sgd_update: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const Parameter& p : params) state.velocity.emplace_back(p.value.shape());
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].value;
        const Tensor& g = grads[i];
        Tensor& v = state.velocity[i];
        if (!p.same_shape(g) || !p.same_shape(v))
            throw ShapeError("sgd_update: shape mismatch at parameter '" + params[i].name + "'");
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double coupled = g[j] + weight_decay * p[j];
            v[j] = momentum * v[j] + coupled;
            p[j] -= lr * v[j];
        }
    }
    state.lr = lr;
}

IntTensor argmax_channels(const Tensor& logits) {
    if (logits.rank() != 4)
        throw ShapeError("argmax_channels: logits must be rank 4, got " +
                         shape_to_string(logits.shape()));
    const int64_t N = logits.extent(0), K = logits.extent(1);
    const int64_t hw = logits.extent(2) * logits.extent(3);
    IntTensor out({N, logits.extent(2), logits.extent(3)});
    for (int64_t n = 0; n < N; ++n) {
        const double* pb = logits.data() + n * K * hw;
        uint32_t* ob = out.data() + n * hw;
        for (int64_t q = 0; q < hw; ++q) {
            double best = pb[q];
            uint32_t arg = 0;
            for (int64_t c = 1; c < K; ++c) {
                if (pb[c * hw + q] > best) {
                    best = pb[c * hw + q];
                    arg = uint32_t(c);
                }
            }
            ob[q] = arg;
        }
    }
    return out;
}

namespace {

struct EvalOutcome {
    double loss = 0.0;
    double mean_dice = 0.0;
};

EvalOutcome evaluate_split(const Network& net, const std::vector<SegmentationSample>& split,
                           const ClassWeights& weights, double dice_mix, int64_t batch_size,
                           int64_t num_classes) {
    double loss_acc = 0.0;
    int64_t seen = 0;
    std::vector<IntTensor> preds, gts;
    std::vector<int64_t> order(split.size());
    for (size_t i = 0; i < split.size(); ++i) order[i] = int64_t(i);
    for (int64_t start = 0; start < int64_t(split.size()); start += batch_size) {
        const int64_t end = std::min<int64_t>(int64_t(split.size()), start + batch_size);
        std::vector<int64_t> idx(order.begin() + start, order.begin() + end);
        const Tensor batch = stack_images(split, idx);
        const IntTensor labels = stack_labels(split, idx);
        ad::Var logits = net.forward(batch).logits;
        ad::Var loss = segmentation_loss(logits, labels, weights, dice_mix);
        loss_acc += loss.value()[0] * double(idx.size());
        seen += int64_t(idx.size());
        const IntTensor pred = argmax_channels(logits.value());
        const int64_t H = pred.extent(1), W = pred.extent(2);
        for (size_t b = 0; b < idx.size(); ++b) {
            std::vector<uint32_t> pv(pred.data() + int64_t(b) * H * W,
                                     pred.data() + int64_t(b + 1) * H * W);
            preds.emplace_back(std::vector<int64_t>{H, W}, std::move(pv));
            gts.push_back(split[size_t(idx[size_t(b)])].label);
        }
    }
    const DiceReport report = dice_report(preds, gts, num_classes, /*exclude_background=*/true);
    return {loss_acc / double(seen), report.mean};
}

std::string first_nonfinite_gradient(const std::vector<Parameter>& params,
                                     const std::vector<Tensor>& grads) {
    for (size_t i = 0; i < grads.size(); ++i) {
        for (int64_t j = 0; j < grads[i].numel(); ++j)
            if (!std::isfinite(grads[i][j])) return params[i].name;
    }
    return "";
}

} // namespace

TrainResult train_loop(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg) {
    arch.validate();
    cfg.validate();
    if (data.train.empty() || data.val.empty())
        throw ConfigError("train_loop: train and validation splits must be non-empty");
    const int64_t H = data.train[0].image.extent(1);
    const int64_t W = data.train[0].image.extent(2);
    if (H % 16 != 0 || W % 16 != 0)
        throw ConfigError("train_loop: sample extents must be divisible by 16, got " +
                          std::to_string(H) + "x" + std::to_string(W));

    const double dice_mix = cfg.resolve_loss_mix(arch.kind);
    const ClassWeights weights = median_frequency_weights(data.train, arch.num_classes);

    TrainResult result{Network::build(arch, cfg.seed), {}, 0,
                       std::numeric_limits<double>::infinity()};
    Network& net = result.net;
    OptimState state;
    std::vector<Parameter> best = net.params();
    int64_t since_best = 0;

    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        state.epoch = epoch;

        double train_acc = 0.0;
        int64_t seen = 0;
        const auto batches =
            batch_indices(int64_t(data.train.size()), cfg.batch_size, cfg.seed, epoch);
        for (size_t step = 0; step < batches.size(); ++step) {
            const std::vector<int64_t>& idx = batches[step];
            const Tensor batch = stack_images(data.train, idx);
            const IntTensor labels = stack_labels(data.train, idx);

            Network::Forward fwd = net.forward(batch);
            ad::Var loss = segmentation_loss(fwd.logits, labels, weights, dice_mix);
            ad::backward(loss);

            std::vector<Tensor> grads;
            grads.reserve(fwd.param_vars.size());
            for (const ad::Var& pv : fwd.param_vars) grads.push_back(pv.grad());

            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) {
                const std::string culprit = first_nonfinite_gradient(net.params(), grads);
                throw NumericError(
                    "training aborted: non-finite loss at epoch " + std::to_string(epoch) +
                    ", step " + std::to_string(step) +
                    (culprit.empty() ? " (all parameter gradients finite)"
                                     : "; first non-finite gradient: " + culprit));
            }
            train_acc += lv * double(idx.size());
            seen += int64_t(idx.size());

            sgd_update(net.params(), grads, state, lr, cfg.momentum, cfg.weight_decay);
        }

        const EvalOutcome val = evaluate_split(net, data.val, weights, dice_mix, cfg.batch_size,
                                               arch.num_classes);
        result.log.push_back(
            {epoch, lr, train_acc / double(seen), val.loss, val.mean_dice});

        if (val.loss < result.best_val_loss) {
            result.best_val_loss = val.loss;
            result.best_epoch = epoch;
            best = net.params();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    net.params() = best;
    return result;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,lr,train_loss,val_loss,val_dice\n";
    char buf[160];
    for (const EpochLog& row : log) {
        std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.10g\n",
                      (long long)row.epoch, row.lr, row.train_loss, row.val_loss, row.val_dice);
        out += buf;
    }
    return out;
}

} // namespace scseg
