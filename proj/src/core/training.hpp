#pragma once

#include <cstdint>
#include <vector>

#include "autodiff.hpp"
#include "network.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

namespace scseg {

struct TrainConfig {
    double initial_lr = 0.01;
    double lr_decay_factor = 0.1;
    int64_t lr_decay_every = 10; // epochs per decade
    double momentum = 0.95;
    double weight_decay = 1e-4;
    int64_t batch_size = 4;
    int64_t max_epochs = 30;
    int64_t patience = 5;   // epochs without validation improvement before stopping
    double loss_mix = -1.0; // soft-Dice weight; negative selects by family (sdnet 1, else 0)
    uint64_t seed = 42;

    void validate() const;
    double resolve_loss_mix(ArchKind kind) const;
};

struct OptimState {
    std::vector<Tensor> velocity; // mirrors parameter shapes
    int64_t epoch = 0;
    double lr = 0.0;
};

// Median-frequency class weights: w_c = median(f) / f_c over global pixel
// frequencies. The class whose frequency equals the median gets weight 1.
struct ClassWeights {
    std::vector<double> w;
};

ClassWeights median_frequency_weights(const std::vector<IntTensor>& labels, int64_t num_classes);
ClassWeights median_frequency_weights(const std::vector<SegmentationSample>& samples,
                                      int64_t num_classes);

// Mean over pixels of w_y * (-log softmax(logits)_y). labels [N,H,W] against
// logits [N,K,H,W].
ad::Var weighted_logistic_loss(const ad::Var& logits, const IntTensor& labels,
                               const ClassWeights& w);

// Same loss on an existing probability node (shared softmax).
ad::Var weighted_nll(const ad::Var& probs, const IntTensor& labels, const ClassWeights& w);

// 1 - mean over classes of (2*intersection + eps) / (prob sum + label sum + eps).
ad::Var soft_dice_loss(const ad::Var& probs, const IntTensor& labels, double eps = 1e-6);

// CE + mix * Dice with one shared softmax; mix == 0 returns the CE node itself.
ad::Var segmentation_loss(const ad::Var& logits, const IntTensor& labels, const ClassWeights& w,
                          double dice_mix);

// initial_lr * lr_decay_factor^floor(epoch / lr_decay_every).
double lr_at_epoch(const TrainConfig& cfg, int64_t epoch);

// Classical coupled update: g' = grad + wd*param; v <- m*v + g'; param -= lr*v.
void sgd_update(std::vector<Parameter>& params, const std::vector<Tensor>& grads,
                OptimState& state, double lr, double momentum, double weight_decay);

// Per-pixel argmax over the channel axis: [N,K,H,W] -> [N,H,W].
IntTensor argmax_channels(const Tensor& logits);

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice = 0.0; // mean Dice on validation, background excluded
};

struct TrainResult {
    Network net; // weights of the best validation epoch
    std::vector<EpochLog> log;
    int64_t best_epoch = 0;
    double best_val_loss = 0.0;
};

// Deterministic training run: seeded shuffles, fixed accumulation order,
// patience-based early stopping with best-epoch weight restoration. Aborts
// with NumericError (naming the first non-finite parameter gradient) if the
// loss leaves the finite range.
TrainResult train_loop(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg);

std::string train_log_csv(const std::vector<EpochLog>& log);

} // namespace scseg
