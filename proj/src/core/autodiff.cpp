#include "autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace scseg::ad {

namespace {

std::atomic<uint64_t> g_node_counter{0};

int64_t ceil_div(int64_t a, int64_t b) {
    // b > 0
    return a > 0 ? (a + b - 1) / b : a / b;
}

// Four independent accumulator chains pipeline the FMAs; the association
// order is fixed, so results stay bit-reproducible.
double dot_unrolled(const double* a, const double* b, int64_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void check_rank4(const Tensor& t, const char* op, const char* what) {
    if (t.rank() != 4)
        throw ShapeError(std::string(op) + ": " + what + " must be rank 4, got shape " +
                         shape_to_string(t.shape()));
}

} // namespace

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    n->requires_grad = false;
    return Var(n);
}

Var Var::param(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    n->requires_grad = true;
    n->op = "param";
    return Var(n);
}

Var make_op(const char* op, Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    n->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    n->inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        n->requires_grad = n->requires_grad || v.node()->requires_grad;
        n->inputs.push_back(v.node());
    }
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Var(n);
}

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().numel() != 1)
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         shape_to_string(loss.defined() ? loss.value().shape()
                                                        : std::vector<int64_t>{}));

    // Collect every ancestor of the loss.
    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const NodePtr& in : n->inputs) {
            if (seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }

    // Creation order is a topological order; walk it backwards.
    std::sort(nodes.begin(), nodes.end(),
              [](const Node* a, const Node* b) { return a->order > b->order; });

    for (Node* n : nodes) {
        if (n->requires_grad) n->grad = Tensor(n->value.shape());
    }
    if (loss.node()->requires_grad) loss.node()->grad[0] = 1.0;

    for (Node* n : nodes) {
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

// ---- conv2d ----------------------------------------------------------------

namespace {

// Patch-matrix layout for one sample: Q = Cin*kh*kw rows, P = Ho*Wo columns.
// q_major (col[q*P + p]) suits wide outputs where the GEMM vectorizes over
// patches; p_major (col[p*Q + q]) suits the tiny late-encoder maps where a
// contiguous dot over Q wins.
struct ConvDims {
    int64_t Cin, H, W, Cout, kh, kw, stride, padding, Ho, Wo, P, Q;
    bool q_major() const { return P >= 32; }
};

void im2col(const double* xn, const ConvDims& d, bool q_major, double* col) {
    std::fill(col, col + d.Q * d.P, 0.0);
    int64_t q = 0;
    for (int64_t ci = 0; ci < d.Cin; ++ci) {
        const double* xplane = xn + ci * d.H * d.W;
        for (int64_t r = 0; r < d.kh; ++r) {
            for (int64_t s = 0; s < d.kw; ++s, ++q) {
                const int64_t ow0 = std::max<int64_t>(0, ceil_div(d.padding - s, d.stride));
                const int64_t ow1 =
                    std::min<int64_t>(d.Wo, ceil_div(d.W + d.padding - s, d.stride));
                for (int64_t oh = 0; oh < d.Ho; ++oh) {
                    const int64_t ih = oh * d.stride - d.padding + r;
                    if (ih < 0 || ih >= d.H) continue;
                    const double* xrow = xplane + ih * d.W - d.padding + s;
                    if (q_major) {
                        double* dst = col + q * d.P + oh * d.Wo;
                        if (d.stride == 1) {
                            for (int64_t ow = ow0; ow < ow1; ++ow) dst[ow] = xrow[ow];
                        } else {
                            for (int64_t ow = ow0; ow < ow1; ++ow) dst[ow] = xrow[ow * d.stride];
                        }
                    } else {
                        for (int64_t ow = ow0; ow < ow1; ++ow)
                            col[(oh * d.Wo + ow) * d.Q + q] = xrow[ow * d.stride];
                    }
                }
            }
        }
    }
}

// Scatter-add of the patch-matrix gradient back onto the input sample.
void col2im_add(const double* col, const ConvDims& d, bool q_major, double* dxn) {
    int64_t q = 0;
    for (int64_t ci = 0; ci < d.Cin; ++ci) {
        double* dxplane = dxn + ci * d.H * d.W;
        for (int64_t r = 0; r < d.kh; ++r) {
            for (int64_t s = 0; s < d.kw; ++s, ++q) {
                const int64_t ow0 = std::max<int64_t>(0, ceil_div(d.padding - s, d.stride));
                const int64_t ow1 =
                    std::min<int64_t>(d.Wo, ceil_div(d.W + d.padding - s, d.stride));
                for (int64_t oh = 0; oh < d.Ho; ++oh) {
                    const int64_t ih = oh * d.stride - d.padding + r;
                    if (ih < 0 || ih >= d.H) continue;
                    double* dxrow = dxplane + ih * d.W - d.padding + s;
                    if (q_major) {
                        const double* src = col + q * d.P + oh * d.Wo;
                        if (d.stride == 1) {
                            for (int64_t ow = ow0; ow < ow1; ++ow) dxrow[ow] += src[ow];
                        } else {
                            for (int64_t ow = ow0; ow < ow1; ++ow)
                                dxrow[ow * d.stride] += src[ow];
                        }
                    } else {
                        for (int64_t ow = ow0; ow < ow1; ++ow)
                            dxrow[ow * d.stride] += col[(oh * d.Wo + ow) * d.Q + q];
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& input, const Var& weight, const std::optional<Var>& bias,
           int64_t stride, int64_t padding) {
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    check_rank4(x, "conv2d", "input");
    check_rank4(w, "conv2d", "weight");
    const int64_t N = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int64_t Cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(1) != Cin)
        throw ShapeError("conv2d: weight input channels " + std::to_string(w.extent(1)) +
                         " do not match input channels " + std::to_string(Cin));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("conv2d: kernel extents must be odd, got " + std::to_string(kh) + "x" +
                         std::to_string(kw));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    const int64_t hnum = H + 2 * padding - kh;
    const int64_t wnum = W + 2 * padding - kw;
    if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0)
        throw ShapeError("conv2d: output extent is not an integer for input " +
                         shape_to_string(x.shape()) + ", kernel " + std::to_string(kh) + "x" +
                         std::to_string(kw) + ", stride " + std::to_string(stride) +
                         ", padding " + std::to_string(padding));
    const int64_t Ho = hnum / stride + 1;
    const int64_t Wo = wnum / stride + 1;
    if (bias) {
        const Tensor& b = bias->value();
        if (b.rank() != 1 || b.extent(0) != Cout)
            throw ShapeError("conv2d: bias must have shape (" + std::to_string(Cout) +
                             "), got " + shape_to_string(b.shape()));
    }

    const ConvDims d{Cin, H, W, Cout, kh, kw, stride, padding, Ho, Wo, Ho * Wo, Cin * kh * kw};
    const bool q_major = d.q_major();

    Tensor out({N, Cout, Ho, Wo});
    const double* xp = x.data();
    const double* wp = w.data();
    double* op = out.data();
    std::vector<double> col(size_t(d.Q * d.P));
    for (int64_t n = 0; n < N; ++n) {
        im2col(xp + n * Cin * H * W, d, q_major, col.data());
        double* ob = op + n * Cout * d.P;
        if (q_major) {
            for (int64_t co = 0; co < Cout; ++co) {
                double* orow = ob + co * d.P;
                std::fill(orow, orow + d.P, bias ? bias->value()[co] : 0.0);
                const double* wrow = wp + co * d.Q;
                for (int64_t q = 0; q < d.Q; ++q) {
                    const double wv = wrow[q];
                    const double* crow = col.data() + q * d.P;
                    for (int64_t p = 0; p < d.P; ++p) orow[p] += wv * crow[p];
                }
            }
        } else {
            for (int64_t co = 0; co < Cout; ++co) {
                const double* wrow = wp + co * d.Q;
                double* orow = ob + co * d.P;
                const double b0 = bias ? bias->value()[co] : 0.0;
                for (int64_t p = 0; p < d.P; ++p)
                    orow[p] = b0 + dot_unrolled(wrow, col.data() + p * d.Q, d.Q);
            }
        }
    }

    std::vector<Var> ins{input, weight};
    if (bias) ins.push_back(*bias);
    const bool has_bias = bias.has_value();
    return make_op("conv2d", std::move(out), std::move(ins), [N, d, q_major,
                                                              has_bias](Node& self) {
        Node& xin = *self.inputs[0];
        Node& win = *self.inputs[1];
        const double* g = self.grad.data();
        const double* xp = xin.value.data();
        const double* wp = win.value.data();
        const bool need_dx = xin.requires_grad;
        const bool need_dw = win.requires_grad;
        if (has_bias && self.inputs[2]->requires_grad) {
            double* db = self.inputs[2]->ensure_grad().data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t co = 0; co < d.Cout; ++co) {
                    const double* grow = g + (n * d.Cout + co) * d.P;
                    double acc = 0.0;
                    for (int64_t p = 0; p < d.P; ++p) acc += grow[p];
                    db[co] += acc;
                }
        }
        if (!need_dx && !need_dw) return;
        double* dxp = need_dx ? xin.ensure_grad().data() : nullptr;
        double* dwp = need_dw ? win.ensure_grad().data() : nullptr;
        std::vector<double> col(size_t(d.Q * d.P));
        std::vector<double> dcol(need_dx ? size_t(d.Q * d.P) : 0);
        for (int64_t n = 0; n < N; ++n) {
            const double* gb = g + n * d.Cout * d.P;
            if (need_dw) im2col(xp + n * d.Cin * d.H * d.W, d, q_major, col.data());
            if (need_dx) std::fill(dcol.begin(), dcol.end(), 0.0);
            if (q_major) {
                for (int64_t co = 0; co < d.Cout; ++co) {
                    const double* grow = gb + co * d.P;
                    if (need_dw) {
                        double* dwrow = dwp + co * d.Q;
                        for (int64_t q = 0; q < d.Q; ++q)
                            dwrow[q] += dot_unrolled(grow, col.data() + q * d.P, d.P);
                    }
                    if (need_dx) {
                        const double* wrow = wp + co * d.Q;
                        for (int64_t q = 0; q < d.Q; ++q) {
                            const double wv = wrow[q];
                            double* drow = dcol.data() + q * d.P;
                            for (int64_t p = 0; p < d.P; ++p) drow[p] += wv * grow[p];
                        }
                    }
                }
            } else {
                for (int64_t co = 0; co < d.Cout; ++co) {
                    const double* grow = gb + co * d.P;
                    const double* wrow = wp + co * d.Q;
                    double* dwrow = need_dw ? dwp + co * d.Q : nullptr;
                    for (int64_t p = 0; p < d.P; ++p) {
                        const double gv = grow[p];
                        if (need_dw) {
                            const double* crow = col.data() + p * d.Q;
                            for (int64_t q = 0; q < d.Q; ++q) dwrow[q] += gv * crow[q];
                        }
                        if (need_dx) {
                            double* drow = dcol.data() + p * d.Q;
                            for (int64_t q = 0; q < d.Q; ++q) drow[q] += wrow[q] * gv;
                        }
                    }
                }
            }
            if (need_dx) col2im_add(dcol.data(), d, q_major, dxp + n * d.Cin * d.H * d.W);
        }
    });
}

// ---- fully connected --------------------------------------------------------

Var fully_connected(const Var& x, const Var& weight, const std::optional<Var>& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (wv.rank() != 2)
        throw ShapeError("fully_connected: weight must be rank 2, got shape " +
                         shape_to_string(wv.shape()));
    if (xv.rank() < 1)
        throw ShapeError("fully_connected: input must have at least one axis");
    const int64_t Dout = wv.extent(0), Din = wv.extent(1);
    if (xv.extent(xv.rank() - 1) != Din)
        throw ShapeError("fully_connected: last input extent " +
                         std::to_string(xv.extent(xv.rank() - 1)) + " does not match Din " +
                         std::to_string(Din));
    if (bias) {
        const Tensor& b = bias->value();
        if (b.rank() != 1 || b.extent(0) != Dout)
            throw ShapeError("fully_connected: bias must have shape (" + std::to_string(Dout) +
                             "), got " + shape_to_string(b.shape()));
    }
    const int64_t M = xv.numel() / Din;
    std::vector<int64_t> oshape = xv.shape();
    oshape.back() = Dout;
    Tensor out(oshape);
    const double* xp = xv.data();
    const double* wp = wv.data();
    double* op = out.data();
    for (int64_t m = 0; m < M; ++m) {
        const double* xrow = xp + m * Din;
        double* orow = op + m * Dout;
        for (int64_t o = 0; o < Dout; ++o)
            orow[o] = (bias ? bias->value()[o] : 0.0) + dot_unrolled(wp + o * Din, xrow, Din);
    }

    std::vector<Var> ins{x, weight};
    if (bias) ins.push_back(*bias);
    const bool has_bias = bias.has_value();
    return make_op("fully_connected", std::move(out), std::move(ins),
                   [M, Din, Dout, has_bias](Node& self) {
        Node& xin = *self.inputs[0];
        Node& win = *self.inputs[1];
        const double* g = self.grad.data();
        const double* xp = xin.value.data();
        const double* wp = win.value.data();
        if (xin.requires_grad) {
            double* dx = xin.ensure_grad().data();
            for (int64_t m = 0; m < M; ++m) {
                const double* grow = g + m * Dout;
                double* dxrow = dx + m * Din;
                for (int64_t o = 0; o < Dout; ++o) {
                    const double gv = grow[o];
                    const double* wrow = wp + o * Din;
                    for (int64_t i = 0; i < Din; ++i) dxrow[i] += gv * wrow[i];
                }
            }
        }
        if (win.requires_grad) {
            double* dw = win.ensure_grad().data();
            for (int64_t m = 0; m < M; ++m) {
                const double* grow = g + m * Dout;
                const double* xrow = xp + m * Din;
                for (int64_t o = 0; o < Dout; ++o) {
                    const double gv = grow[o];
                    double* dwrow = dw + o * Din;
                    for (int64_t i = 0; i < Din; ++i) dwrow[i] += gv * xrow[i];
                }
            }
        }
        if (has_bias && self.inputs[2]->requires_grad) {
            double* db = self.inputs[2]->ensure_grad().data();
            for (int64_t m = 0; m < M; ++m) {
                const double* grow = g + m * Dout;
                for (int64_t o = 0; o < Dout; ++o) db[o] += grow[o];
            }
        }
    });
}

// ---- pooling ----------------------------------------------------------------

std::pair<Var, IntTensor> max_pool2d(const Var& input, int64_t k) {
    const Tensor& x = input.value();
    check_rank4(x, "max_pool2d", "input");
    if (k < 1) throw ShapeError("max_pool2d: window must be >= 1");
    const int64_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (H % k != 0 || W % k != 0)
        throw ShapeError("max_pool2d: spatial extents " + std::to_string(H) + "x" +
                         std::to_string(W) + " are not divisible by window " + std::to_string(k));
    const int64_t h = H / k, w = W / k;
    Tensor out({N, C, h, w});
    IntTensor idx({N, C, h, w});
    const double* xp = x.data();
    double* op = out.data();
    uint32_t* ip = idx.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* xplane = xp + nc * H * W;
        double* oplane = op + nc * h * w;
        uint32_t* iplane = ip + nc * h * w;
        for (int64_t oh = 0; oh < h; ++oh) {
            for (int64_t ow = 0; ow < w; ++ow) {
                double best = xplane[(oh * k) * W + ow * k];
                uint32_t arg = 0;
                for (int64_t r = 0; r < k; ++r) {
                    const double* xrow = xplane + (oh * k + r) * W + ow * k;
                    for (int64_t s = 0; s < k; ++s) {
                        if (xrow[s] > best) { // strict: ties keep the first position
                            best = xrow[s];
                            arg = uint32_t(r * k + s);
                        }
                    }
                }
                oplane[oh * w + ow] = best;
                iplane[oh * w + ow] = arg;
            }
        }
    }

    Var v = make_op("max_pool2d", std::move(out), {input}, [N, C, H, W, h, w, k, idx](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const uint32_t* ip = idx.data();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            double* dxplane = dx + nc * H * W;
            const double* gplane = g + nc * h * w;
            const uint32_t* iplane = ip + nc * h * w;
            for (int64_t oh = 0; oh < h; ++oh) {
                for (int64_t ow = 0; ow < w; ++ow) {
                    const uint32_t a = iplane[oh * w + ow];
                    const int64_t r = a / k, s = a % k;
                    dxplane[(oh * k + r) * W + ow * k + s] += gplane[oh * w + ow];
                }
            }
        }
    });
    return {v, idx};
}

Var max_pool2d_pinned(const Var& input, const IntTensor& indices, int64_t k) {
    const Tensor& x = input.value();
    check_rank4(x, "max_pool2d_pinned", "input");
    if (k < 1) throw ShapeError("max_pool2d_pinned: window must be >= 1");
    const int64_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (H % k != 0 || W % k != 0)
        throw ShapeError("max_pool2d_pinned: spatial extents not divisible by the window");
    const int64_t h = H / k, w = W / k;
    if (indices.shape() != std::vector<int64_t>{N, C, h, w})
        throw ShapeError("max_pool2d_pinned: indices shape " + shape_to_string(indices.shape()) +
                         " does not match pooled output");
    for (int64_t i = 0; i < indices.numel(); ++i)
        if (indices[i] >= uint32_t(k * k))
            throw ShapeError("max_pool2d_pinned: index outside the window");

    Tensor out({N, C, h, w});
    const double* xp = x.data();
    double* op = out.data();
    const uint32_t* ip = indices.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* xplane = xp + nc * H * W;
        double* oplane = op + nc * h * w;
        const uint32_t* iplane = ip + nc * h * w;
        for (int64_t oh = 0; oh < h; ++oh) {
            for (int64_t ow = 0; ow < w; ++ow) {
                const uint32_t a = iplane[oh * w + ow];
                oplane[oh * w + ow] = xplane[(oh * k + a / k) * W + ow * k + a % k];
            }
        }
    }
    IntTensor idx = indices;
    return make_op("max_pool2d_pinned", std::move(out), {input},
                   [N, C, H, W, h, w, k, idx](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const uint32_t* ip = idx.data();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            double* dxplane = dx + nc * H * W;
            const double* gplane = g + nc * h * w;
            const uint32_t* iplane = ip + nc * h * w;
            for (int64_t oh = 0; oh < h; ++oh) {
                for (int64_t ow = 0; ow < w; ++ow) {
                    const uint32_t a = iplane[oh * w + ow];
                    dxplane[(oh * k + a / k) * W + ow * k + a % k] += gplane[oh * w + ow];
                }
            }
        }
    });
}

Var max_unpool2d(const Var& input, const IntTensor& indices, int64_t k) {
    const Tensor& x = input.value();
    check_rank4(x, "max_unpool2d", "input");
    if (k < 1) throw ShapeError("max_unpool2d: window must be >= 1");
    if (indices.shape() != x.shape())
        throw ShapeError("max_unpool2d: indices shape " + shape_to_string(indices.shape()) +
                         " does not match input shape " + shape_to_string(x.shape()));
    const int64_t N = x.extent(0), C = x.extent(1), h = x.extent(2), w = x.extent(3);
    for (int64_t i = 0; i < indices.numel(); ++i) {
        if (indices[i] >= uint32_t(k * k))
            throw ShapeError("max_unpool2d: index " + std::to_string(indices[i]) +
                             " is outside the " + std::to_string(k) + "x" + std::to_string(k) +
                             " window");
    }
    const int64_t H = h * k, W = w * k;
    Tensor out({N, C, H, W});
    const double* xp = x.data();
    double* op = out.data();
    const uint32_t* ip = indices.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* xplane = xp + nc * h * w;
        double* oplane = op + nc * H * W;
        const uint32_t* iplane = ip + nc * h * w;
        for (int64_t oh = 0; oh < h; ++oh) {
            for (int64_t ow = 0; ow < w; ++ow) {
                const uint32_t a = iplane[oh * w + ow];
                const int64_t r = a / k, s = a % k;
                oplane[(oh * k + r) * W + ow * k + s] = xplane[oh * w + ow];
            }
        }
    }

    IntTensor idx = indices;
    return make_op("max_unpool2d", std::move(out), {input}, [N, C, h, w, k, W, idx](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const uint32_t* ip = idx.data();
        const int64_t H = h * k;
        for (int64_t nc = 0; nc < N * C; ++nc) {
            double* dxplane = dx + nc * h * w;
            const double* gplane = g + nc * H * W;
            const uint32_t* iplane = ip + nc * h * w;
            for (int64_t oh = 0; oh < h; ++oh) {
                for (int64_t ow = 0; ow < w; ++ow) {
                    const uint32_t a = iplane[oh * w + ow];
                    const int64_t r = a / k, s = a % k;
                    dxplane[oh * w + ow] += gplane[(oh * k + r) * W + ow * k + s];
                }
            }
        }
    });
}

Var upsample_nearest(const Var& input, int64_t k) {
    const Tensor& x = input.value();
    check_rank4(x, "upsample_nearest", "input");
    if (k < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    const int64_t N = x.extent(0), C = x.extent(1), h = x.extent(2), w = x.extent(3);
    const int64_t H = h * k, W = w * k;
    Tensor out({N, C, H, W});
    const double* xp = x.data();
    double* op = out.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* xplane = xp + nc * h * w;
        double* oplane = op + nc * H * W;
        for (int64_t oh = 0; oh < H; ++oh) {
            const double* xrow = xplane + (oh / k) * w;
            double* orow = oplane + oh * W;
            for (int64_t ow = 0; ow < W; ++ow) orow[ow] = xrow[ow / k];
        }
    }
    return make_op("upsample_nearest", std::move(out), {input}, [N, C, h, w, k](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const int64_t H = h * k, W = w * k;
        for (int64_t nc = 0; nc < N * C; ++nc) {
            double* dxplane = dx + nc * h * w;
            const double* gplane = g + nc * H * W;
            for (int64_t oh = 0; oh < H; ++oh) {
                const double* grow = gplane + oh * W;
                double* dxrow = dxplane + (oh / k) * w;
                for (int64_t ow = 0; ow < W; ++ow) dxrow[ow / k] += grow[ow];
            }
        }
    });
}

// ---- elementwise ------------------------------------------------------------

Var relu(const Var& x) {
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return make_op("relu", std::move(out), {x}, [](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const double* xv = xin.value.data();
        for (int64_t i = 0; i < self.value.numel(); ++i)
            if (xv[i] > 0.0) dx[i] += g[i];
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_op("sigmoid", std::move(out), {x}, [](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const double* y = self.value.data();
        for (int64_t i = 0; i < self.value.numel(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var softmax_channels(const Var& logits) {
    const Tensor& x = logits.value();
    check_rank4(x, "softmax_channels", "logits");
    const int64_t N = x.extent(0), K = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (K < 2) throw ShapeError("softmax_channels: need at least 2 channels");
    Tensor out(x.shape());
    const int64_t hw = H * W;
    const double* xp = x.data();
    double* op = out.data();
    for (int64_t n = 0; n < N; ++n) {
        const double* xb = xp + n * K * hw;
        double* ob = op + n * K * hw;
        for (int64_t p = 0; p < hw; ++p) {
            double m = xb[p];
            for (int64_t c = 1; c < K; ++c) m = std::max(m, xb[c * hw + p]);
            double z = 0.0;
            for (int64_t c = 0; c < K; ++c) {
                const double e = std::exp(xb[c * hw + p] - m);
                ob[c * hw + p] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (int64_t c = 0; c < K; ++c) ob[c * hw + p] *= inv;
        }
    }
    return make_op("softmax_channels", std::move(out), {logits}, [N, K, hw](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        const double* y = self.value.data();
        for (int64_t n = 0; n < N; ++n) {
            const double* yb = y + n * K * hw;
            const double* gb = g + n * K * hw;
            double* db = dx + n * K * hw;
            for (int64_t p = 0; p < hw; ++p) {
                double dot = 0.0;
                for (int64_t c = 0; c < K; ++c) dot += gb[c * hw + p] * yb[c * hw + p];
                for (int64_t c = 0; c < K; ++c)
                    db[c * hw + p] += yb[c * hw + p] * (gb[c * hw + p] - dot);
            }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    if (b.defined() && b.value().empty()) return a;
    if (a.defined() && a.value().empty()) return b;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_rank4(av, "concat_channels", "first input");
    check_rank4(bv, "concat_channels", "second input");
    if (av.extent(0) != bv.extent(0) || av.extent(2) != bv.extent(2) ||
        av.extent(3) != bv.extent(3))
        throw ShapeError("concat_channels: spatial/batch mismatch, " +
                         shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
    const int64_t N = av.extent(0), Ca = av.extent(1), Cb = bv.extent(1);
    const int64_t hw = av.extent(2) * av.extent(3);
    Tensor out({N, Ca + Cb, av.extent(2), av.extent(3)});
    double* op = out.data();
    for (int64_t n = 0; n < N; ++n) {
        std::copy(av.data() + n * Ca * hw, av.data() + (n + 1) * Ca * hw,
                  op + n * (Ca + Cb) * hw);
        std::copy(bv.data() + n * Cb * hw, bv.data() + (n + 1) * Cb * hw,
                  op + (n * (Ca + Cb) + Ca) * hw);
    }
    return make_op("concat_channels", std::move(out), {a, b}, [N, Ca, Cb, hw](Node& self) {
        const double* g = self.grad.data();
        Node& an = *self.inputs[0];
        Node& bn = *self.inputs[1];
        if (an.requires_grad) {
            double* da = an.ensure_grad().data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < Ca * hw; ++i) da[n * Ca * hw + i] += g[n * (Ca + Cb) * hw + i];
        }
        if (bn.requires_grad) {
            double* db = bn.ensure_grad().data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < Cb * hw; ++i)
                    db[n * Cb * hw + i] += g[(n * (Ca + Cb) + Ca) * hw + i];
        }
    });
}

Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv))
        throw ShapeError("add: shape mismatch, " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return make_op("add", std::move(out), {a, b}, [](Node& self) {
        const double* g = self.grad.data();
        for (int j = 0; j < 2; ++j) {
            Node& in = *self.inputs[size_t(j)];
            if (!in.requires_grad) continue;
            double* d = in.ensure_grad().data();
            for (int64_t i = 0; i < self.value.numel(); ++i) d[i] += g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv))
        throw ShapeError("mul: shape mismatch, " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return make_op("mul", std::move(out), {a, b}, [](Node& self) {
        const double* g = self.grad.data();
        Node& an = *self.inputs[0];
        Node& bn = *self.inputs[1];
        if (an.requires_grad) {
            double* da = an.ensure_grad().data();
            const double* bvp = bn.value.data();
            for (int64_t i = 0; i < self.value.numel(); ++i) da[i] += g[i] * bvp[i];
        }
        if (bn.requires_grad) {
            double* db = bn.ensure_grad().data();
            const double* avp = an.value.data();
            for (int64_t i = 0; i < self.value.numel(); ++i) db[i] += g[i] * avp[i];
        }
    });
}

Var scale(const Var& x, double c) {
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return make_op("scale", std::move(out), {x}, [c](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < self.value.numel(); ++i) dx[i] += c * g[i];
    });
}

Var channel_mean(const Var& u) {
    const Tensor& x = u.value();
    check_rank4(x, "channel_mean", "input");
    const int64_t N = x.extent(0), C = x.extent(1), hw = x.extent(2) * x.extent(3);
    Tensor out({N, C});
    const double inv = 1.0 / double(hw);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* plane = x.data() + nc * hw;
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += plane[i];
        out[nc] = acc * inv;
    }
    return make_op("channel_mean", std::move(out), {u}, [hw, inv](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double* g = self.grad.data();
        for (int64_t nc = 0; nc < self.value.numel(); ++nc) {
            const double gv = g[nc] * inv;
            double* plane = dx + nc * hw;
            for (int64_t i = 0; i < hw; ++i) plane[i] += gv;
        }
    });
}

Var scale_channels(const Var& u, const Var& gate) {
    const Tensor& x = u.value();
    const Tensor& gv = gate.value();
    check_rank4(x, "scale_channels", "input");
    if (gv.rank() != 2 || gv.extent(0) != x.extent(0) || gv.extent(1) != x.extent(1))
        throw ShapeError("scale_channels: gate shape " + shape_to_string(gv.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
    const int64_t NC = x.extent(0) * x.extent(1), hw = x.extent(2) * x.extent(3);
    Tensor out(x.shape());
    for (int64_t nc = 0; nc < NC; ++nc) {
        const double s = gv[nc];
        const double* xplane = x.data() + nc * hw;
        double* oplane = out.data() + nc * hw;
        for (int64_t i = 0; i < hw; ++i) oplane[i] = s * xplane[i];
    }
    return make_op("scale_channels", std::move(out), {u, gate}, [NC, hw](Node& self) {
        Node& un = *self.inputs[0];
        Node& gn = *self.inputs[1];
        const double* g = self.grad.data();
        if (un.requires_grad) {
            double* du = un.ensure_grad().data();
            const double* gatev = gn.value.data();
            for (int64_t nc = 0; nc < NC; ++nc) {
                const double s = gatev[nc];
                for (int64_t i = 0; i < hw; ++i) du[nc * hw + i] += s * g[nc * hw + i];
            }
        }
        if (gn.requires_grad) {
            double* dg = gn.ensure_grad().data();
            const double* uv = un.value.data();
            for (int64_t nc = 0; nc < NC; ++nc) {
                double acc = 0.0;
                for (int64_t i = 0; i < hw; ++i) acc += g[nc * hw + i] * uv[nc * hw + i];
                dg[nc] += acc;
            }
        }
    });
}

Var scale_spatial(const Var& u, const Var& gate) {
    const Tensor& x = u.value();
    const Tensor& gv = gate.value();
    check_rank4(x, "scale_spatial", "input");
    check_rank4(gv, "scale_spatial", "gate");
    if (gv.extent(0) != x.extent(0) || gv.extent(1) != 1 || gv.extent(2) != x.extent(2) ||
        gv.extent(3) != x.extent(3))
        throw ShapeError("scale_spatial: gate shape " + shape_to_string(gv.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
    const int64_t N = x.extent(0), C = x.extent(1), hw = x.extent(2) * x.extent(3);
    Tensor out(x.shape());
    for (int64_t n = 0; n < N; ++n) {
        const double* gplane = gv.data() + n * hw;
        for (int64_t c = 0; c < C; ++c) {
            const double* xplane = x.data() + (n * C + c) * hw;
            double* oplane = out.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) oplane[i] = gplane[i] * xplane[i];
        }
    }
    return make_op("scale_spatial", std::move(out), {u, gate}, [N, C, hw](Node& self) {
        Node& un = *self.inputs[0];
        Node& gn = *self.inputs[1];
        const double* g = self.grad.data();
        if (un.requires_grad) {
            double* du = un.ensure_grad().data();
            const double* gatev = gn.value.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < hw; ++i)
                        du[(n * C + c) * hw + i] += gatev[n * hw + i] * g[(n * C + c) * hw + i];
        }
        if (gn.requires_grad) {
            double* dg = gn.ensure_grad().data();
            const double* uv = un.value.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < hw; ++i)
                        dg[n * hw + i] += uv[(n * C + c) * hw + i] * g[(n * C + c) * hw + i];
        }
    });
}

Var sum_all(const Var& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
    return make_op("sum_all", Tensor::scalar(acc), {x}, [](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double g = self.grad[0];
        for (int64_t i = 0; i < xin.value.numel(); ++i) dx[i] += g;
    });
}

Var mean_all(const Var& x) {
    const int64_t n = x.value().numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x.value()[i];
    return make_op("mean_all", Tensor::scalar(acc / double(n)), {x}, [n](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double g = self.grad[0] / double(n);
        for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    if (!x.value().same_shape(weights))
        throw ShapeError("weighted_sum: weight shape " + shape_to_string(weights.shape()) +
                         " does not match input " + shape_to_string(x.value().shape()));
    double acc = 0.0;
    for (int64_t i = 0; i < weights.numel(); ++i) acc += weights[i] * x.value()[i];
    Tensor w = weights;
    return make_op("weighted_sum", Tensor::scalar(acc), {x}, [w](Node& self) {
        Node& xin = *self.inputs[0];
        if (!xin.requires_grad) return;
        double* dx = xin.ensure_grad().data();
        const double g = self.grad[0];
        for (int64_t i = 0; i < w.numel(); ++i) dx[i] += g * w[i];
    });
}

// ---- gradient oracle ----------------------------------------------------------

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps) {
    if (eps <= 0.0) throw ShapeError("finite_diff_gradient: eps must be > 0");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(probe);
        probe[i] = orig - eps;
        const double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
    if (!analytic.same_shape(numeric))
        throw ShapeError("max_relative_error: shape mismatch");
    double worst = 0.0;
    for (int64_t i = 0; i < analytic.numel(); ++i) {
        const double denom =
            std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-8});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

} // namespace scseg::ad
