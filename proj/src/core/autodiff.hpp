#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace scseg::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the differentiable-operation graph. Graphs are built
// define-by-run: every operation allocates a node holding its output value.
// `order` is the creation sequence number; since construction is
// single-threaded per graph it doubles as a topological key, and backward
// visits nodes in strictly decreasing order so gradient accumulation over
// fan-out happens in one fixed sequence (bit-reproducible).
struct Node {
    Tensor value;
    Tensor grad; // allocated lazily during backward, same shape as value
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backprop; // scatters self.grad into inputs' grads
    bool requires_grad = false;
    uint64_t order = 0;
    const char* op = "leaf";

    Tensor& ensure_grad() {
        if (grad.numel() == 0) grad = Tensor(value.shape());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    // Leaf that does not require gradients (inputs, labels-as-floats, ...).
    static Var constant(Tensor value);
    // Leaf parameter; backward() fills its grad.
    static Var param(Tensor value);

    bool defined() const { return n_ != nullptr; }
    const Tensor& value() const { return n_->value; }
    // Gradient after backward(); zeros if the node was not reached.
    Tensor grad() const {
        if (n_->grad.numel() == 0) return Tensor(n_->value.shape());
        return n_->grad;
    }
    const NodePtr& node() const { return n_; }

private:
    NodePtr n_;
};

// Generic node constructor used by all operations (including those defined in
// other modules, e.g. SE blocks and losses).
Var make_op(const char* op, Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backprop);

// Reverse-topological gradient accumulation from a scalar loss. Resets the
// gradients of every reachable node first, so calling it twice on the same
// graph yields bit-identical results.
void backward(const Var& loss);

// ---- operations ------------------------------------------------------------

// Cross-correlation (no kernel flip). input [N,Cin,H,W], weight
// [Cout,Cin,kh,kw] with odd kh,kw, optional bias [Cout].
Var conv2d(const Var& input, const Var& weight, const std::optional<Var>& bias,
           int64_t stride, int64_t padding);

// x [..., Din], weight [Dout, Din], optional bias [Dout] -> [..., Dout].
Var fully_connected(const Var& x, const Var& weight, const std::optional<Var>& bias);

// k x k max pooling; H and W must be divisible by k. Returned indices are
// window-relative offsets in [0, k*k), ties resolved to the first position in
// row-major order.
std::pair<Var, IntTensor> max_pool2d(const Var& input, int64_t k);

// Pooling with the argmax selection pinned to the given indices: picks
// x[indices] per window regardless of the current values. Used to hold the
// discrete routing fixed while probing a network with finite differences (the
// gradient at the base point is unchanged by the pinning).
Var max_pool2d_pinned(const Var& input, const IntTensor& indices, int64_t k);

// Scatter values back to the argmax positions recorded by max_pool2d.
Var max_unpool2d(const Var& input, const IntTensor& indices, int64_t k);

Var upsample_nearest(const Var& input, int64_t k);

Var relu(const Var& x);
Var sigmoid(const Var& x);

// Per-pixel softmax over the channel axis of [N,K,H,W], K >= 2. Stabilized by
// max subtraction.
Var softmax_channels(const Var& logits);

// Channels of a followed by channels of b; N,H,W must match. Either side may
// be an empty tensor, in which case the other is returned unchanged.
Var concat_channels(const Var& a, const Var& b);

// Elementwise; shapes must match.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);

// Per-sample per-channel mean over the spatial axes: [N,C,H,W] -> [N,C].
Var channel_mean(const Var& u);

// Broadcast multiplies used by the recalibration blocks.
Var scale_channels(const Var& u, const Var& gate); // gate [N,C]
Var scale_spatial(const Var& u, const Var& gate);  // gate [N,1,H,W]

Var sum_all(const Var& x);  // -> scalar
Var mean_all(const Var& x); // -> scalar
// Scalar dot product with a fixed weight tensor (same shape as x).
Var weighted_sum(const Var& x, const Tensor& weights);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// Central finite differences of a scalar function, the gradient oracle:
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per element.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps = 1e-5);

// Elementwise relative error |a-b| / max(|a|, |b|, 1e-8), reduced to the max.
double max_relative_error(const Tensor& analytic, const Tensor& numeric);

} // namespace scseg::ad
