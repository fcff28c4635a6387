#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scp/error.hpp"
#include "scp/rng.hpp"
#include "scp/tensor.hpp"

namespace scp {

// ---------------------------------------------------------------------------
// Model types
// ---------------------------------------------------------------------------

// One convolutional stage: 2-D conv (stride 1), ReLU, optional 2x2 max pool.
struct ConvLayer {
    Tensor weight; // [out_channels, in_channels, kh, kw]
    Tensor bias;   // [out_channels]
    int pad = 1;
    bool pool = false;

    int out_channels() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(1); }
    int kernel_h() const { return weight.dim(2); }
    int kernel_w() const { return weight.dim(3); }
};

struct LinearHead {
    Tensor weight; // [num_classes, in_features]
    Tensor bias;   // [num_classes]
};

// Small CNN: conv stages, global average pool, linear classifier.
// tap_layer is 1-based and selects which stage's post-ReLU (pre-pool)
// activations are exposed as feature maps. Parameters are float32; all
// internal activation and gradient math runs in double.
struct ToyCnn {
    int in_channels = 1;
    int in_height = 16;
    int in_width = 16;
    int num_classes = 2;
    int tap_layer = 1;
    std::vector<ConvLayer> conv;
    LinearHead head;

    int num_conv_layers() const { return static_cast<int>(conv.size()); }

    int channels_at(int layer) const {
        if (layer < 1 || layer > num_conv_layers()) {
            throw config_error("layer index " + std::to_string(layer) + " out of range [1," +
                               std::to_string(num_conv_layers()) + "]");
        }
        return conv[static_cast<std::size_t>(layer - 1)].out_channels();
    }

    std::int64_t num_parameters() const {
        std::int64_t n = 0;
        for (const auto& l : conv) n += l.weight.size() + l.bias.size();
        return n + head.weight.size() + head.bias.size();
    }

    void validate() const {
        if (conv.empty()) throw config_error("model has no conv layers");
        int ch = in_channels;
        for (std::size_t i = 0; i < conv.size(); ++i) {
            const auto& l = conv[i];
            if (l.weight.rank() != 4 || l.bias.rank() != 1 ||
                l.bias.dim(0) != l.out_channels()) {
                throw config_error("conv layer " + std::to_string(i + 1) +
                                   " has malformed parameter shapes");
            }
            if (l.in_channels() != ch) {
                throw config_error("conv layer " + std::to_string(i + 1) + " expects " +
                                   std::to_string(l.in_channels()) + " input channels, got " +
                                   std::to_string(ch));
            }
            ch = l.out_channels();
        }
        if (head.weight.rank() != 2 || head.weight.dim(1) != ch) {
            throw config_error("head expects " + std::to_string(head.weight.dim(1)) +
                               " input features, last conv layer provides " + std::to_string(ch));
        }
        if (head.weight.dim(0) != num_classes || head.bias.dim(0) != num_classes) {
            throw config_error("head output width does not match num_classes");
        }
        if (tap_layer < 1 || tap_layer > num_conv_layers()) {
            throw config_error("tap_layer " + std::to_string(tap_layer) + " out of range [1," +
                               std::to_string(num_conv_layers()) + "]");
        }
    }
};

struct ConvSpec {
    int out_channels = 8;
    int kernel = 3;
    int pad = -1; // -1 = (kernel-1)/2
    bool pool = false;
};

inline ToyCnn make_toy_cnn(int in_channels, int in_height, int in_width, int num_classes,
                           const std::vector<ConvSpec>& specs, std::uint64_t seed) {
    if (specs.empty()) throw config_error("model needs at least one conv layer");
    if (num_classes < 2) throw config_error("num_classes must be >= 2");
    ToyCnn m;
    m.in_channels = in_channels;
    m.in_height = in_height;
    m.in_width = in_width;
    m.num_classes = num_classes;
    m.tap_layer = static_cast<int>(specs.size());
    Rng rng(seed);
    int ch = in_channels;
    for (const auto& s : specs) {
        ConvLayer l;
        l.pad = s.pad >= 0 ? s.pad : (s.kernel - 1) / 2;
        l.pool = s.pool;
        l.weight = Tensor({s.out_channels, ch, s.kernel, s.kernel});
        l.bias = Tensor({s.out_channels});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ch) * s.kernel * s.kernel));
        for (std::int64_t i = 0; i < l.weight.size(); ++i) {
            l.weight[i] = static_cast<float>(rng.normal(0.0, stddev));
        }
        ch = s.out_channels;
        m.conv.push_back(std::move(l));
    }
    m.head.weight = Tensor({num_classes, ch});
    m.head.bias = Tensor({num_classes});
    const double stddev = std::sqrt(1.0 / static_cast<double>(ch));
    for (std::int64_t i = 0; i < m.head.weight.size(); ++i) {
        m.head.weight[i] = static_cast<float>(rng.normal(0.0, stddev));
    }
    m.validate();
    return m;
}

// Default desk-scale architecture: 8 then 16 channels of 3x3 convs,
// 2x2 max pool after the first stage, GAP head, tap on the last stage.
inline ToyCnn default_toy_cnn(int in_channels, int in_height, int in_width, int num_classes,
                              std::uint64_t seed) {
    return make_toy_cnn(in_channels, in_height, in_width, num_classes,
                        {{8, 3, -1, true}, {16, 3, -1, false}}, seed);
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct SampleBatch {
    Tensor images;                    // [b, C, H, W]
    std::vector<int> labels;          // class labels y
    std::vector<std::uint8_t> groups; // sensitive labels c in {0,1}

    int size() const { return static_cast<int>(labels.size()); }
};

// ---------------------------------------------------------------------------
// Internal double-precision activation buffers
// ---------------------------------------------------------------------------

namespace detail {

struct Act {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Act() = default;
    Act(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    double* slab(int ni, int ci) { return v.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
    const double* slab(int ni, int ci) const {
        return v.data() + (static_cast<std::size_t>(ni) * c + ci) * plane();
    }
};

// Activations live in double internally but are float32 at every public
// surface, so exceeding float range counts as overflow of the layer.
inline void require_finite(const Act& a, const std::string& where) {
    for (const double x : a.v) {
        if (!std::isfinite(x) || std::abs(x) > 3.4028234663852886e38) {
            throw numeric_error("non-finite values produced by " + where);
        }
    }
}

inline Act conv_forward(const Act& in, const ConvLayer& layer) {
    const int co = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
    const int pad = layer.pad;
    const int oh = in.h + 2 * pad - kh + 1;
    const int ow = in.w + 2 * pad - kw + 1;
    if (oh < 1 || ow < 1) {
        throw config_error("conv kernel larger than padded input (" + std::to_string(in.h) + "x" +
                           std::to_string(in.w) + " with pad " + std::to_string(pad) + ")");
    }
    Act out(in.n, co, oh, ow);
    const float* wt = layer.weight.data();
    for (int n = 0; n < in.n; ++n) {
        for (int oc = 0; oc < co; ++oc) {
            const double bias = layer.bias[oc];
            double* oplane = out.slab(n, oc);
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double acc = bias;
                    for (int ic = 0; ic < in.c; ++ic) {
                        const double* iplane = in.slab(n, ic);
                        const float* w_c =
                            wt + (static_cast<std::size_t>(oc) * in.c + ic) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = y + ky - pad;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = x + kx - pad;
                                if (ix < 0 || ix >= in.w) continue;
                                acc += iplane[iy * in.w + ix] *
                                       static_cast<double>(w_c[ky * kw + kx]);
                            }
                        }
                    }
                    oplane[y * ow + x] = acc;
                }
            }
        }
    }
    return out;
}

inline void relu_inplace(Act& a) {
    for (double& x : a.v) {
        if (x < 0.0) x = 0.0;
    }
}

struct PoolResult {
    Act out;
    std::vector<std::int32_t> argmax; // flat spatial index into the pre-pool plane
};

inline PoolResult maxpool2x2_forward(const Act& in) {
    const int oh = in.h / 2, ow = in.w / 2;
    if (oh < 1 || ow < 1) throw config_error("2x2 max pool needs at least 2x2 spatial input");
    PoolResult r{Act(in.n, in.c, oh, ow), {}};
    r.argmax.resize(r.out.v.size());
    for (int n = 0; n < in.n; ++n) {
        for (int ch = 0; ch < in.c; ++ch) {
            const double* plane = in.slab(n, ch);
            double* oplane = r.out.slab(n, ch);
            std::int32_t* amax =
                r.argmax.data() + (static_cast<std::size_t>(n) * in.c + ch) * oh * ow;
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    int best = (2 * y) * in.w + 2 * x;
                    double bv = plane[best];
                    const int cand[3] = {(2 * y) * in.w + 2 * x + 1, (2 * y + 1) * in.w + 2 * x,
                                         (2 * y + 1) * in.w + 2 * x + 1};
                    for (const int idx : cand) {
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                    oplane[y * ow + x] = bv;
                    amax[y * ow + x] = best;
                }
            }
        }
    }
    return r;
}

// [n, c] means over the spatial plane
inline std::vector<double> gap_forward(const Act& in) {
    std::vector<double> out(static_cast<std::size_t>(in.n) * in.c, 0.0);
    const double inv = 1.0 / static_cast<double>(in.plane());
    for (int n = 0; n < in.n; ++n) {
        for (int ch = 0; ch < in.c; ++ch) {
            const double* plane = in.slab(n, ch);
            double acc = 0.0;
            for (std::size_t i = 0; i < in.plane(); ++i) acc += plane[i];
            out[static_cast<std::size_t>(n) * in.c + ch] = acc * inv;
        }
    }
    return out;
}

inline std::vector<double> linear_forward(const std::vector<double>& gap, int n, int feat,
                                          const LinearHead& head) {
    const int k = head.weight.dim(0);
    std::vector<double> out(static_cast<std::size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) {
            double acc = head.bias[c];
            for (int j = 0; j < feat; ++j) {
                acc += gap[static_cast<std::size_t>(i) * feat + j] *
                       static_cast<double>(head.weight.at2(c, j));
            }
            out[static_cast<std::size_t>(i) * k + c] = acc;
        }
    }
    return out;
}

inline void check_input(const ToyCnn& model, const Tensor& images) {
    if (images.rank() != 4) {
        throw config_error("images must be [b,C,H,W], got " + images.shape_str());
    }
    if (images.dim(0) < 1) throw config_error("batch must hold at least one image");
    if (images.dim(1) != model.in_channels || images.dim(2) != model.in_height ||
        images.dim(3) != model.in_width) {
        throw config_error("conv layer 1 expects input [b," + std::to_string(model.in_channels) +
                           "," + std::to_string(model.in_height) + "," +
                           std::to_string(model.in_width) + "], got " + images.shape_str());
    }
}

inline Act to_act(const Tensor& images) {
    Act a(images.dim(0), images.dim(1), images.dim(2), images.dim(3));
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] = images.data()[i];
    return a;
}

inline Tensor to_tensor(const Act& a) {
    Tensor t({a.n, a.c, a.h, a.w});
    for (std::size_t i = 0; i < a.v.size(); ++i) t.data()[i] = static_cast<float>(a.v[i]);
    return t;
}

struct ForwardState {
    std::vector<Act> conv_inputs; // input to each conv stage
    std::vector<Act> post_relu;   // after ReLU, before pool
    std::vector<PoolResult> pools; // entries only meaningful where layer.pool
    Act gap_in;
    std::vector<double> gap_out; // [n, feat]
    std::vector<double> logits;  // [n, num_classes]
};

// Runs the whole net in double; fills tap_out (if any) with the requested
// stage and state (if any) with everything backward needs.
inline void run_forward(const ToyCnn& model, const Tensor& images, int tap_layer, Act* tap_out,
                        ForwardState* state) {
    check_input(model, images);
    Act cur = to_act(images);
    for (int li = 0; li < model.num_conv_layers(); ++li) {
        const ConvLayer& layer = model.conv[static_cast<std::size_t>(li)];
        if (cur.c != layer.in_channels()) {
            throw config_error("conv layer " + std::to_string(li + 1) + " expects " +
                               std::to_string(layer.in_channels()) + " input channels, got " +
                               std::to_string(cur.c));
        }
        if (state) state->conv_inputs.push_back(cur);
        Act act = conv_forward(cur, layer);
        relu_inplace(act);
        require_finite(act, "conv layer " + std::to_string(li + 1));
        if (tap_out && li + 1 == tap_layer) *tap_out = act;
        if (layer.pool) {
            PoolResult pr = maxpool2x2_forward(act);
            cur = pr.out;
            if (state) {
                state->post_relu.push_back(std::move(act));
                state->pools.push_back(std::move(pr));
            }
        } else {
            cur = act;
            if (state) {
                state->post_relu.push_back(std::move(act));
                state->pools.emplace_back();
            }
        }
    }
    const int n = cur.n, feat = cur.c;
    std::vector<double> gap = gap_forward(cur);
    std::vector<double> logits = linear_forward(gap, n, feat, model.head);
    for (const double x : logits) {
        if (!std::isfinite(x) || std::abs(x) > 3.4028234663852886e38) {
            throw numeric_error("non-finite values produced by linear head");
        }
    }
    if (state) {
        state->gap_in = std::move(cur);
        state->gap_out = std::move(gap);
        state->logits = std::move(logits);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Forward pass (public float32 surface)
// ---------------------------------------------------------------------------

struct ForwardResult {
    Tensor logits;   // [b, num_classes], unnormalized
    Tensor tap_maps; // [b, K_tap, H', W'], post-ReLU pre-pool at tap layer
};

inline ForwardResult forward(const ToyCnn& model, const Tensor& images, int tap_layer = 0) {
    model.validate();
    if (tap_layer == 0) tap_layer = model.tap_layer;
    if (tap_layer < 1 || tap_layer > model.num_conv_layers()) {
        throw config_error("tap layer " + std::to_string(tap_layer) + " out of range [1," +
                           std::to_string(model.num_conv_layers()) + "]");
    }
    detail::Act tap;
    detail::ForwardState state;
    detail::run_forward(model, images, tap_layer, &tap, &state);
    ForwardResult res;
    res.tap_maps = detail::to_tensor(tap);
    res.logits = Tensor({static_cast<int>(images.dim(0)), model.num_classes});
    for (std::size_t i = 0; i < state.logits.size(); ++i) {
        res.logits.data()[i] = static_cast<float>(state.logits[i]);
    }
    return res;
}

// Post-ReLU (pre-pool) activations of one conv stage, the scoring tap.
inline Tensor layer_activations(const ToyCnn& model, const Tensor& images, int layer) {
    model.validate();
    if (layer < 1 || layer > model.num_conv_layers()) {
        throw config_error("layer " + std::to_string(layer) + " out of range [1," +
                           std::to_string(model.num_conv_layers()) + "]");
    }
    detail::Act tap;
    detail::run_forward(model, images, layer, &tap, nullptr);
    return detail::to_tensor(tap);
}

// ---------------------------------------------------------------------------
// Loss, gradients, SGD
// ---------------------------------------------------------------------------

struct Gradients {
    struct ConvGrad {
        std::vector<double> weight;
        std::vector<double> bias;
    };
    std::vector<ConvGrad> conv;
    std::vector<double> head_weight;
    std::vector<double> head_bias;
    double loss = 0.0;
};

namespace detail {

// Mean softmax cross-entropy over the batch; fills dlogits (already /b).
inline double softmax_ce(const std::vector<double>& logits, int b, int k,
                         const std::vector<int>& labels, std::vector<double>& dlogits) {
    dlogits.assign(static_cast<std::size_t>(b) * k, 0.0);
    double loss = 0.0;
    for (int n = 0; n < b; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= k) {
            throw config_error("class label " + std::to_string(y) + " out of range [0," +
                               std::to_string(k) + ")");
        }
        const double* row = logits.data() + static_cast<std::size_t>(n) * k;
        double mx = row[0];
        for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < k; ++c) z += std::exp(row[c] - mx);
        const double logz = std::log(z);
        loss += -(row[y] - mx - logz);
        for (int c = 0; c < k; ++c) {
            const double p = std::exp(row[c] - mx - logz);
            dlogits[static_cast<std::size_t>(n) * k + c] = (p - (c == y ? 1.0 : 0.0)) / b;
        }
    }
    return loss / b;
}

// dout is the gradient w.r.t. the post-ReLU output; the ReLU gate is folded
// in here (gradient flows only where the activation is positive).
inline void conv_backward(const Act& in, const ConvLayer& layer, const Act& post_relu,
                          const std::vector<double>& dout, std::vector<double>& dweight,
                          std::vector<double>& dbias, std::vector<double>& dinput) {
    const int co = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
    const int pad = layer.pad;
    const int oh = post_relu.h, ow = post_relu.w;
    dweight.assign(static_cast<std::size_t>(layer.weight.size()), 0.0);
    dbias.assign(static_cast<std::size_t>(co), 0.0);
    dinput.assign(in.v.size(), 0.0);
    const float* wt = layer.weight.data();
    for (int n = 0; n < in.n; ++n) {
        for (int oc = 0; oc < co; ++oc) {
            const double* act = post_relu.slab(n, oc);
            const double* g_out =
                dout.data() + (static_cast<std::size_t>(n) * co + oc) * oh * ow;
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    if (act[y * ow + x] <= 0.0) continue;
                    const double g = g_out[y * ow + x];
                    if (g == 0.0) continue;
                    dbias[static_cast<std::size_t>(oc)] += g;
                    for (int ic = 0; ic < in.c; ++ic) {
                        const double* iplane = in.slab(n, ic);
                        double* dplane =
                            dinput.data() + (static_cast<std::size_t>(n) * in.c + ic) * in.plane();
                        const std::size_t wbase =
                            (static_cast<std::size_t>(oc) * in.c + ic) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = y + ky - pad;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = x + kx - pad;
                                if (ix < 0 || ix >= in.w) continue;
                                dweight[wbase + static_cast<std::size_t>(ky) * kw + kx] +=
                                    g * iplane[iy * in.w + ix];
                                dplane[iy * in.w + ix] +=
                                    g * static_cast<double>(
                                            wt[wbase + static_cast<std::size_t>(ky) * kw + kx]);
                            }
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

// Reverse-mode gradients of mean cross-entropy w.r.t. every parameter.
inline Gradients compute_gradients(const ToyCnn& model, const Tensor& images,
                                   const std::vector<int>& labels) {
    model.validate();
    if (images.dim(0) != static_cast<int>(labels.size())) {
        throw config_error("batch images/labels length mismatch");
    }
    detail::ForwardState state;
    detail::run_forward(model, images, 0, nullptr, &state);

    Gradients g;
    g.conv.resize(model.conv.size());

    const int b = images.dim(0);
    const int k = model.num_classes;
    std::vector<double> dlogits;
    g.loss = detail::softmax_ce(state.logits, b, k, labels, dlogits);
    if (!std::isfinite(g.loss)) throw numeric_error("non-finite loss from linear head");

    const int feat = model.head.weight.dim(1);

    // linear head
    g.head_weight.assign(static_cast<std::size_t>(model.head.weight.size()), 0.0);
    g.head_bias.assign(static_cast<std::size_t>(k), 0.0);
    std::vector<double> dgap(static_cast<std::size_t>(b) * feat, 0.0);
    for (int n = 0; n < b; ++n) {
        for (int c = 0; c < k; ++c) {
            const double gl = dlogits[static_cast<std::size_t>(n) * k + c];
            g.head_bias[static_cast<std::size_t>(c)] += gl;
            for (int j = 0; j < feat; ++j) {
                g.head_weight[static_cast<std::size_t>(c) * feat + j] +=
                    gl * state.gap_out[static_cast<std::size_t>(n) * feat + j];
                dgap[static_cast<std::size_t>(n) * feat + j] +=
                    gl * static_cast<double>(model.head.weight.at2(c, j));
            }
        }
    }

    // global average pool
    const std::size_t plane = state.gap_in.plane();
    std::vector<double> dcur(state.gap_in.v.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(plane);
    for (int n = 0; n < b; ++n) {
        for (int c = 0; c < feat; ++c) {
            const double gv = dgap[static_cast<std::size_t>(n) * feat + c] * inv;
            double* dst = dcur.data() + (static_cast<std::size_t>(n) * feat + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = gv;
        }
    }

    // conv stack, last to first
    for (int li = model.num_conv_layers() - 1; li >= 0; --li) {
        const auto& layer = model.conv[static_cast<std::size_t>(li)];
        const auto& post = state.post_relu[static_cast<std::size_t>(li)];
        std::vector<double> dpost;
        if (layer.pool) {
            const auto& pr = state.pools[static_cast<std::size_t>(li)];
            dpost.assign(post.v.size(), 0.0);
            const std::size_t hw = post.plane();
            const std::size_t phw = pr.out.plane();
            for (int n = 0; n < b; ++n) {
                for (int ch = 0; ch < post.c; ++ch) {
                    const std::size_t base = static_cast<std::size_t>(n) * post.c + ch;
                    for (std::size_t i = 0; i < phw; ++i) {
                        dpost[base * hw + pr.argmax[base * phw + i]] += dcur[base * phw + i];
                    }
                }
            }
        } else {
            dpost = std::move(dcur);
        }
        auto& cg = g.conv[static_cast<std::size_t>(li)];
        std::vector<double> dinput;
        detail::conv_backward(state.conv_inputs[static_cast<std::size_t>(li)], layer, post, dpost,
                              cg.weight, cg.bias, dinput);
        dcur = std::move(dinput);
    }
    return g;
}

// One SGD step on mean cross-entropy; returns the pre-step loss.
inline double backward_and_step(ToyCnn& model, const SampleBatch& batch, double lr) {
    if (lr <= 0.0) throw config_error("learning rate must be > 0");
    if (batch.size() < 1) throw config_error("batch must hold at least one sample");
    Gradients g = compute_gradients(model, batch.images, batch.labels);
    for (std::size_t li = 0; li < model.conv.size(); ++li) {
        auto& layer = model.conv[li];
        const auto& cg = g.conv[li];
        for (std::int64_t i = 0; i < layer.weight.size(); ++i) {
            layer.weight[i] =
                static_cast<float>(layer.weight[i] - lr * cg.weight[static_cast<std::size_t>(i)]);
        }
        for (std::int64_t i = 0; i < layer.bias.size(); ++i) {
            layer.bias[i] =
                static_cast<float>(layer.bias[i] - lr * cg.bias[static_cast<std::size_t>(i)]);
        }
    }
    for (std::int64_t i = 0; i < model.head.weight.size(); ++i) {
        model.head.weight[i] = static_cast<float>(model.head.weight[i] -
                                                  lr * g.head_weight[static_cast<std::size_t>(i)]);
    }
    for (std::int64_t i = 0; i < model.head.bias.size(); ++i) {
        model.head.bias[i] = static_cast<float>(model.head.bias[i] -
                                                lr * g.head_bias[static_cast<std::size_t>(i)]);
    }
    return g.loss;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// Argmax predictions; ties break toward the lowest class index.
inline std::vector<int> evaluate(const ToyCnn& model, const Tensor& images, int batch_size = 64) {
    const int n = images.dim(0);
    if (n < 1) throw config_error("dataset must hold at least one sample");
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    std::vector<int> preds;
    preds.reserve(static_cast<std::size_t>(n));
    for (int start = 0; start < n; start += batch_size) {
        const int count = std::min(batch_size, n - start);
        Tensor chunk({count, c, h, w});
        std::copy(images.data() + start * stride, images.data() + (start + count) * stride,
                  chunk.data());
        const ForwardResult fr = forward(model, chunk);
        for (int i = 0; i < count; ++i) {
            int best = 0;
            float bv = fr.logits.at2(i, 0);
            for (int k = 1; k < model.num_classes; ++k) {
                if (fr.logits.at2(i, k) > bv) {
                    bv = fr.logits.at2(i, k);
                    best = k;
                }
            }
            preds.push_back(best);
        }
    }
    return preds;
}

// ---------------------------------------------------------------------------
// Structural channel removal
// ---------------------------------------------------------------------------

// Removes the given output channels of conv layer `layer` (1-based) and the
// matching input slices of the consumer (next conv layer, or head columns via
// the GAP mapping). Surviving parameters are copied bit-identically.
inline ToyCnn remove_channels(const ToyCnn& model, int layer, const std::vector<int>& channels) {
    model.validate();
    if (layer < 1 || layer > model.num_conv_layers()) {
        throw config_error("prune layer " + std::to_string(layer) + " out of range [1," +
                           std::to_string(model.num_conv_layers()) + "]");
    }
    if (channels.empty()) throw config_error("channel set to remove must be nonempty");
    const int k = model.channels_at(layer);
    std::vector<bool> drop(static_cast<std::size_t>(k), false);
    for (const int c : channels) {
        if (c < 0 || c >= k) {
            throw config_error("channel index " + std::to_string(c) + " out of range [0," +
                               std::to_string(k) + ") at layer " + std::to_string(layer));
        }
        if (drop[static_cast<std::size_t>(c)]) {
            throw config_error("duplicate channel index " + std::to_string(c));
        }
        drop[static_cast<std::size_t>(c)] = true;
    }
    if (static_cast<int>(channels.size()) >= k) {
        throw config_error("refusing to remove all " + std::to_string(k) +
                           " channels of layer " + std::to_string(layer));
    }
    std::vector<int> keep;
    for (int c = 0; c < k; ++c) {
        if (!drop[static_cast<std::size_t>(c)]) keep.push_back(c);
    }

    ToyCnn out = model;
    const std::size_t li = static_cast<std::size_t>(layer - 1);

    // this layer: drop filter rows and biases
    {
        const ConvLayer& src = model.conv[li];
        const int ci = src.in_channels(), kh = src.kernel_h(), kw = src.kernel_w();
        ConvLayer dst;
        dst.pad = src.pad;
        dst.pool = src.pool;
        dst.weight = Tensor({static_cast<int>(keep.size()), ci, kh, kw});
        dst.bias = Tensor({static_cast<int>(keep.size())});
        const std::size_t row = static_cast<std::size_t>(ci) * kh * kw;
        for (std::size_t r = 0; r < keep.size(); ++r) {
            const float* srcp = src.weight.data() + static_cast<std::size_t>(keep[r]) * row;
            std::copy(srcp, srcp + row, dst.weight.data() + r * row);
            dst.bias[static_cast<std::int64_t>(r)] = src.bias[keep[r]];
        }
        out.conv[li] = std::move(dst);
    }

    if (layer < model.num_conv_layers()) {
        // next conv layer: drop input slices
        const ConvLayer& src = model.conv[li + 1];
        const int co = src.out_channels(), kh = src.kernel_h(), kw = src.kernel_w();
        ConvLayer dst;
        dst.pad = src.pad;
        dst.pool = src.pool;
        dst.weight = Tensor({co, static_cast<int>(keep.size()), kh, kw});
        dst.bias = src.bias;
        const std::size_t plane = static_cast<std::size_t>(kh) * kw;
        for (int oc = 0; oc < co; ++oc) {
            for (std::size_t r = 0; r < keep.size(); ++r) {
                const float* srcp =
                    src.weight.data() + (static_cast<std::size_t>(oc) * k + keep[r]) * plane;
                std::copy(srcp, srcp + plane,
                          dst.weight.data() +
                              (static_cast<std::size_t>(oc) * keep.size() + r) * plane);
            }
        }
        out.conv[li + 1] = std::move(dst);
    } else {
        // head: GAP maps channel r to linear column r
        const int nc = model.num_classes;
        LinearHead dst;
        dst.bias = model.head.bias;
        dst.weight = Tensor({nc, static_cast<int>(keep.size())});
        for (int c = 0; c < nc; ++c) {
            for (std::size_t r = 0; r < keep.size(); ++r) {
                dst.weight.at2(c, static_cast<int>(r)) = model.head.weight.at2(c, keep[r]);
            }
        }
        out.head = std::move(dst);
    }
    out.validate();
    return out;
}

} // namespace scp
