#pragma once

// Declarative assembly of the network: truncated MobileNetV1 backbone table,
// patch extraction block, global average pooling, and the self-attention
// classifier, plus parameter bookkeeping (freezing, counting, persistence
// hooks). A model is a flat ordered list of layer records driven by one
// forward/backward interpreter, so the unfreeze logic, parameter table, and
// Grad-CAM taps all share the same enumeration.

#include <string>
#include <unordered_map>
#include <vector>

#include "pattlite/grad.hpp"
#include "pattlite/ops.hpp"

namespace pattlite {

enum class LayerKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    BatchNorm,
    Activation,
    Pad,
    GlobalAvgPool,
    Dense,
    Attention,
    Softmax,
};

enum class Act { Relu, Relu6 };

struct LayerDef {
    std::string name;
    LayerKind kind = LayerKind::Activation;
    int kernel = 1;
    int stride = 1;
    int out_channels = 0;  // conv/dense output width; ignored for depthwise
    Padding padding = Padding::Same;
    Act act = Act::Relu6;
    bool backbone = false;
    int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;  // Pad layers only
};

// Conv, batch-norm, activation (incl. softmax), dense, and attention records
// participate in the flattened unfreeze enumeration; pure shape ops do not.
inline bool is_counted_record(LayerKind k) {
    return k != LayerKind::Pad && k != LayerKind::GlobalAvgPool;
}

using BackboneSpec = std::vector<LayerDef>;

// Truncated MobileNetV1 table: conv1 3x3 s2 -> 32, blocks b1..b8 of
// [dw 3x3 + BN + relu6, pw 1x1 + BN + relu6] with pointwise out-channels
// 64, 128(s2), 128, 256(s2), 256, 512(s2), 512, 512, and block 9 ending
// after its depthwise conv + BN + activation. 224x224x3 in, 14x14x512 out.
inline BackboneSpec mobilenet_v1_truncated() {
    BackboneSpec spec;
    auto conv_bn_act = [&spec](const std::string& base, LayerKind kind, int kernel, int stride,
                               int out_channels) {
        spec.push_back({base, kind, kernel, stride, out_channels, Padding::Same, Act::Relu6, true});
        spec.push_back({base + "_bn", LayerKind::BatchNorm, 1, 1, 0, Padding::Same, Act::Relu6, true});
        spec.push_back({base + "_act", LayerKind::Activation, 1, 1, 0, Padding::Same, Act::Relu6, true});
    };
    conv_bn_act("conv1", LayerKind::Conv, 3, 2, 32);
    struct Block {
        int dw_stride;
        int pw_out;
    };
    const Block blocks[8] = {{1, 64},  {2, 128}, {1, 128}, {2, 256},
                             {1, 256}, {2, 512}, {1, 512}, {1, 512}};
    for (int b = 0; b < 8; ++b) {
        const std::string base = "b" + std::to_string(b + 1);
        conv_bn_act(base + "_dw", LayerKind::DepthwiseConv, 3, blocks[b].dw_stride, 0);
        conv_bn_act(base + "_pw", LayerKind::PointwiseConv, 1, 1, blocks[b].pw_out);
    }
    conv_bn_act("b9_dw", LayerKind::DepthwiseConv, 3, 1, 0);
    return spec;
}

enum class AttentionScale { FixedInvSqrt, LearnedScalar };

// Conv/dense weight init. FanIn scales the truncated normal by
// sqrt(2/fan_in) so activations survive a randomly initialized deep chain
// (the from-scratch training pathway); FixedStd uses one standard
// deviation everywhere (init_std, default 0.05), which matches common
// transfer-learning head inits but starves narrow layers when the whole
// network is random.
enum class WeightInit { FanIn, FixedStd };

struct ModelConfig {
    int num_classes = 7;
    bool use_patch_extraction = true;
    bool use_attention_classifier = true;
    int patch_channels = 256;  // D
    int hidden_width = 32;     // H
    AttentionScale attention_scale_mode = AttentionScale::FixedInvSqrt;
    int pad_to = 16;  // padded spatial extent fed to the patch block; 0 = unpadded
    int patch_kernel1 = 4, patch_stride1 = 4;
    int patch_kernel2 = 2, patch_stride2 = 2;
    std::string backbone_tap = "b9_dw_act";
    int input_size = 224;
    int input_channels = 3;
    // Sweep axis: when > 0 the patch block is the baseline
    // two-layer design, one k x k stride-k conv plus a pointwise conv.
    int sweep_kernel = 0;
    WeightInit weight_init = WeightInit::FanIn;
    double init_std = 0.05;  // used by WeightInit::FixedStd
    // Empty means the default truncated MobileNetV1 table.
    BackboneSpec backbone;
};

enum class ParamKind { Weight, Bias, BnGamma, BnBeta, BnMoving };

template <class Scalar>
struct ParamEntry {
    std::string name;
    Tensor<Scalar> value;
    bool trainable = true;
    ParamKind kind = ParamKind::Weight;
};

// Named parameter tensors in construction order. Frozen entries are never
// touched by the optimizer; moving statistics never are, in any mode.
template <class Scalar>
class ParameterStore {
public:
    void add(std::string name, Tensor<Scalar> value, bool trainable, ParamKind kind) {
        if (index_.count(name)) throw ConfigError("ParameterStore: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back({std::move(name), std::move(value), trainable, kind});
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    ParamEntry<Scalar>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParameterStore: unknown name " + name);
        return entries_[it->second];
    }
    const ParamEntry<Scalar>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParameterStore: unknown name " + name);
        return entries_[it->second];
    }
    std::vector<ParamEntry<Scalar>>& entries() { return entries_; }
    const std::vector<ParamEntry<Scalar>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<ParamEntry<Scalar>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class Scalar>
using GradMap = std::unordered_map<std::string, Tensor<Scalar>>;

enum class Mode { Train, Infer };

template <class Scalar>
class Model {
public:
    ModelConfig cfg;
    std::vector<LayerDef> layers;
    ParameterStore<Scalar> params;
    Scalar bn_momentum = Scalar(0.99);
    Scalar bn_epsilon = Scalar(1e-3);

    int layer_index(const std::string& name) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].name == name) return static_cast<int>(i);
        throw ConfigError("Model: unknown layer name " + name);
    }

    // acts[i] is the input of layer i; acts[layers.size()] is the network
    // output. Entries below `from` are left empty to keep training with a
    // frozen backbone cheap.
    struct Cache {
        std::vector<Tensor<Scalar>> acts;
        int from = 0;
        Tensor<Scalar> logits;  // pre-softmax output
        const Tensor<Scalar>& act(int i) const {
            const auto& t = acts[static_cast<std::size_t>(i)];
            if (t.values().empty() && t.shape().empty())
                throw Error("Model: missing cached activation for layer " + std::to_string(i));
            return t;
        }
    };

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode = Mode::Infer,
                           Cache* cache = nullptr, int cache_from = 0) const {
        check_input(x);
        (void)mode;  // batch norm always runs on stored statistics here
        if (cache) {
            cache->acts.assign(layers.size() + 1, Tensor<Scalar>());
            cache->from = cache_from;
        }
        Tensor<Scalar> cur = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (cache && static_cast<int>(i) >= cache_from)
                cache->acts[i] = cur;
            if (cache && layers[i].kind == LayerKind::Softmax) cache->logits = cur;
            cur = apply_layer(layers[i], cur);
        }
        if (cache) cache->acts[layers.size()] = cur;
        return cur;
    }

    // Index of the first layer owning a trainable parameter; layers.size()
    // when everything is frozen.
    int first_trainable_layer() const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            for (const auto& pname : layer_param_names(layers[i]))
                if (params.at(pname).trainable) return static_cast<int>(i);
        return static_cast<int>(layers.size());
    }

    // Walks the chain top-down from the logits gradient, accumulating
    // trainable-parameter gradients (when `grads` is given) and returning
    // the gradient with respect to acts[down_to_layer].
    Tensor<Scalar> backward_from_logits(const Cache& cache, Tensor<Scalar> dcur, int down_to_layer,
                                        GradMap<Scalar>* grads) const {
        const int softmax_index = static_cast<int>(layers.size()) - 1;
        if (layers[static_cast<std::size_t>(softmax_index)].kind != LayerKind::Softmax)
            throw Error("Model: expected softmax as the final layer");
        for (int i = softmax_index - 1; i >= down_to_layer; --i)
            dcur = layer_backward(layers[static_cast<std::size_t>(i)], cache.act(i), dcur, grads);
        return dcur;
    }

    // Loss gradient pass used by the trainer: fused softmax/cross-entropy
    // at the logits, then the chain walk down to the trainable region.
    GradMap<Scalar> backward(const Cache& cache, const std::vector<int>& labels) const {
        GradMap<Scalar> grads;
        const int stop = std::min(first_trainable_layer(),
                                  static_cast<int>(layers.size()) - 1);
        backward_from_logits(cache, sparse_ce_backward(cache.logits, labels), stop, &grads);
        return grads;
    }

    std::vector<std::string> layer_param_names(const LayerDef& def) const {
        std::vector<std::string> names;
        switch (def.kind) {
            case LayerKind::Conv:
            case LayerKind::PointwiseConv:
            case LayerKind::Dense:
                names = {def.name + ".w", def.name + ".b"};
                break;
            case LayerKind::DepthwiseConv:
                names = {def.name + ".w"};
                break;
            case LayerKind::BatchNorm:
                names = {def.name + ".gamma", def.name + ".beta", def.name + ".moving_mean",
                         def.name + ".moving_var"};
                break;
            case LayerKind::Attention:
                if (cfg.attention_scale_mode == AttentionScale::LearnedScalar)
                    names = {def.name + ".log_scale"};
                break;
            default:
                break;
        }
        return names;
    }

    Scalar attention_scale() const {
        if (cfg.attention_scale_mode == AttentionScale::LearnedScalar)
            return std::exp(params.at("attn.log_scale").value[0]);
        return Scalar(1);  // 1/sqrt(d_q) with d_q = 1
    }

    // Self-attention over a pooled vector: the H features are treated as
    // T = H tokens of dimension 1 with Q = K = V equal to the tokens.
    Tensor<Scalar> attention_forward(const Tensor<Scalar>& xr) const {
        const int n = xr.extent(0), h = xr.extent(1);
        const Scalar scale = attention_scale();
        Tensor<Scalar> out({n, h});
        for (int s = 0; s < n; ++s) {
            Tensor<Scalar> tokens({h, 1});
            for (int i = 0; i < h; ++i) tokens(i, 0) = xr(s, i);
            const auto r = scaled_dot_attention(tokens, tokens, tokens, scale);
            for (int i = 0; i < h; ++i) out(s, i) = r.output(i, 0);
        }
        return out;
    }

private:
    void check_input(const Tensor<Scalar>& x) const {
        if (x.rank() != 4 || x.extent(1) != cfg.input_size || x.extent(2) != cfg.input_size ||
            x.extent(3) != cfg.input_channels)
            throw ShapeError("Model::forward: expected [N," + std::to_string(cfg.input_size) + "," +
                             std::to_string(cfg.input_size) + "," +
                             std::to_string(cfg.input_channels) + "], got " + x.shape_string());
    }

    ConvKernel<Scalar> kernel_for(const LayerDef& def) const {
        ConvKernel<Scalar> k;
        k.weights = params.at(def.name + ".w").value;
        if (def.kind != LayerKind::DepthwiseConv) k.bias = params.at(def.name + ".b").value;
        k.stride = def.stride;
        k.padding = def.padding;
        return k;
    }

    BatchNormState<Scalar> bn_for(const LayerDef& def) const {
        BatchNormState<Scalar> s;
        s.gamma = params.at(def.name + ".gamma").value;
        s.beta = params.at(def.name + ".beta").value;
        s.moving_mean = params.at(def.name + ".moving_mean").value;
        s.moving_var = params.at(def.name + ".moving_var").value;
        s.momentum = bn_momentum;
        s.epsilon = bn_epsilon;
        return s;
    }

    Tensor<Scalar> apply_layer(const LayerDef& def, const Tensor<Scalar>& x) const {
        switch (def.kind) {
            case LayerKind::Conv:
            case LayerKind::PointwiseConv:
                return conv2d(x, kernel_for(def));
            case LayerKind::DepthwiseConv:
                return depthwise_conv2d(x, kernel_for(def));
            case LayerKind::BatchNorm:
                // Stored statistics in both stages; batch statistics at
                // batch size 8 are too noisy to normalize with.
                return batch_norm(x, bn_for(def), BnMode::Infer).output;
            case LayerKind::Activation:
                return def.act == Act::Relu6 ? relu6(x) : relu(x);
            case LayerKind::Pad:
                return pad2d(x, def.pad_top, def.pad_bottom, def.pad_left, def.pad_right);
            case LayerKind::GlobalAvgPool:
                return global_average_pool(x);
            case LayerKind::Dense:
                return dense(x, params.at(def.name + ".w").value, params.at(def.name + ".b").value);
            case LayerKind::Attention:
                return attention_forward(x);
            case LayerKind::Softmax:
                return softmax(x);
        }
        throw Error("Model: unhandled layer kind");
    }

    void add_grad(GradMap<Scalar>* grads, const std::string& name, Tensor<Scalar> g) const {
        if (!grads) return;
        if (!params.at(name).trainable) return;
        auto it = grads->find(name);
        if (it == grads->end())
            grads->emplace(name, std::move(g));
        else
            for (Index i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }

    Tensor<Scalar> layer_backward(const LayerDef& def, const Tensor<Scalar>& x,
                                  const Tensor<Scalar>& upstream, GradMap<Scalar>* grads) const {
        switch (def.kind) {
            case LayerKind::Conv:
            case LayerKind::PointwiseConv: {
                auto g = conv2d_backward(x, kernel_for(def), upstream);
                add_grad(grads, def.name + ".w", std::move(g.weights));
                add_grad(grads, def.name + ".b", std::move(g.bias));
                return std::move(g.input);
            }
            case LayerKind::DepthwiseConv: {
                auto g = depthwise_conv2d_backward(x, kernel_for(def), upstream);
                add_grad(grads, def.name + ".w", std::move(g.weights));
                return std::move(g.input);
            }
            case LayerKind::BatchNorm: {
                auto g = batch_norm_backward_infer(x, bn_for(def), upstream);
                add_grad(grads, def.name + ".gamma", std::move(g.gamma));
                add_grad(grads, def.name + ".beta", std::move(g.beta));
                return std::move(g.input);
            }
            case LayerKind::Activation:
                return def.act == Act::Relu6 ? relu6_backward(x, upstream)
                                             : relu_backward(x, upstream);
            case LayerKind::Pad:
                return pad2d_backward(upstream, def.pad_top, def.pad_bottom, def.pad_left,
                                      def.pad_right);
            case LayerKind::GlobalAvgPool:
                return global_average_pool_backward(x.shape(), upstream);
            case LayerKind::Dense: {
                auto g = dense_backward(x, params.at(def.name + ".w").value, upstream);
                add_grad(grads, def.name + ".w", std::move(g.weights));
                add_grad(grads, def.name + ".b", std::move(g.bias));
                return std::move(g.input);
            }
            case LayerKind::Attention:
                return attention_backward(x, upstream, grads);
            case LayerKind::Softmax:
                throw Error("Model: softmax backward runs fused with the loss");
        }
        throw Error("Model: unhandled layer kind");
    }

    Tensor<Scalar> attention_backward(const Tensor<Scalar>& xr, const Tensor<Scalar>& upstream,
                                      GradMap<Scalar>* grads) const {
        const int n = xr.extent(0), h = xr.extent(1);
        const Scalar scale = attention_scale();
        Tensor<Scalar> dx({n, h});
        Scalar dscale_total = Scalar(0);
        for (int s = 0; s < n; ++s) {
            Tensor<Scalar> tokens({h, 1}), up({h, 1});
            for (int i = 0; i < h; ++i) {
                tokens(i, 0) = xr(s, i);
                up(i, 0) = upstream(s, i);
            }
            const auto fwd = scaled_dot_attention(tokens, tokens, tokens, scale);
            const auto g =
                scaled_dot_attention_backward(tokens, tokens, tokens, scale, fwd.weights, up);
            for (int i = 0; i < h; ++i) dx(s, i) = g.q(i, 0) + g.k(i, 0) + g.v(i, 0);
            dscale_total += g.scale;
        }
        if (cfg.attention_scale_mode == AttentionScale::LearnedScalar)
            // d/d(log_scale) = d/d(scale) * scale for scale = exp(log_scale)
            add_grad(grads, "attn.log_scale",
                     Tensor<Scalar>::from_data({1}, {dscale_total * scale}));
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Construction.

namespace detail {

struct ShapeHWC {
    int h = 0, w = 0, c = 0;
};

inline ShapeHWC shape_after(const LayerDef& def, ShapeHWC in) {
    switch (def.kind) {
        case LayerKind::Conv:
        case LayerKind::PointwiseConv: {
            const ConvGeometry g =
                conv_geometry(in.h, in.w, def.kernel, def.kernel, def.stride, def.padding);
            return {g.out_h, g.out_w, def.out_channels};
        }
        case LayerKind::DepthwiseConv: {
            const ConvGeometry g =
                conv_geometry(in.h, in.w, def.kernel, def.kernel, def.stride, def.padding);
            return {g.out_h, g.out_w, in.c};
        }
        case LayerKind::Pad:
            return {in.h + def.pad_top + def.pad_bottom, in.w + def.pad_left + def.pad_right, in.c};
        default:
            return in;
    }
}

}  // namespace detail

// Builds the layer chain and a freshly initialized ParameterStore.
// Conv/dense weights: truncated normal per cfg.weight_init; biases and
// beta zero; gamma one; moving statistics (0, 1). Identical seeds give
// bit-identical stores.
template <class Scalar>
Model<Scalar> build_model(const ModelConfig& cfg, Rng& rng) {
    if (cfg.num_classes < 1) throw ConfigError("build_model: num_classes must be >= 1");
    Model<Scalar> model;
    model.cfg = cfg;

    const BackboneSpec backbone = cfg.backbone.empty() ? mobilenet_v1_truncated() : cfg.backbone;
    // Backbone up to and including the tap layer.
    std::size_t tap_end = backbone.size();
    bool tap_found = false;
    for (std::size_t i = 0; i < backbone.size(); ++i)
        if (backbone[i].name == cfg.backbone_tap) {
            tap_end = i + 1;
            tap_found = true;
            break;
        }
    if (!tap_found) throw ConfigError("build_model: unknown backbone_tap " + cfg.backbone_tap);

    detail::ShapeHWC shape{cfg.input_size, cfg.input_size, cfg.input_channels};
    for (std::size_t i = 0; i < tap_end; ++i) {
        model.layers.push_back(backbone[i]);
        model.layers.back().backbone = true;
        shape = detail::shape_after(model.layers.back(), shape);
    }

    auto push = [&model, &shape](LayerDef def) {
        def.backbone = false;
        model.layers.push_back(def);
        shape = detail::shape_after(def, shape);
    };

    if (cfg.use_patch_extraction) {
        if (cfg.pad_to > 0) {
            if (cfg.pad_to < shape.h || cfg.pad_to < shape.w)
                throw ConfigError("build_model: pad_to smaller than the tapped feature map");
            LayerDef pad{"pad", LayerKind::Pad};
            pad.pad_top = (cfg.pad_to - shape.h) / 2;
            pad.pad_bottom = cfg.pad_to - shape.h - pad.pad_top;
            pad.pad_left = (cfg.pad_to - shape.w) / 2;
            pad.pad_right = cfg.pad_to - shape.w - pad.pad_left;
            push(pad);
        }
        auto check_kernel = [&shape](int k, const std::string& where) {
            if (k > shape.h || k > shape.w)
                throw ConfigError("build_model: " + where + " kernel " + std::to_string(k) +
                                  " exceeds the " + std::to_string(shape.h) + "x" +
                                  std::to_string(shape.w) + " map");
        };
        if (cfg.sweep_kernel > 0) {
            // Baseline patch block: one kxk stride-k conv plus a pointwise conv.
            check_kernel(cfg.sweep_kernel, "sweep");
            push({"patch1_conv", LayerKind::Conv, cfg.sweep_kernel, cfg.sweep_kernel,
                  cfg.patch_channels, Padding::Valid, Act::Relu});
            push({"patch1_act", LayerKind::Activation, 1, 1, 0, Padding::Valid, Act::Relu});
            push({"patch2_pw", LayerKind::PointwiseConv, 1, 1, cfg.patch_channels, Padding::Valid,
                  Act::Relu});
            push({"patch2_act", LayerKind::Activation, 1, 1, 0, Padding::Valid, Act::Relu});
        } else {
            check_kernel(cfg.patch_kernel1, "patch1");
            push({"patch1_dw", LayerKind::DepthwiseConv, cfg.patch_kernel1, cfg.patch_stride1, 0,
                  Padding::Valid, Act::Relu});
            push({"patch1_pw", LayerKind::PointwiseConv, 1, 1, cfg.patch_channels, Padding::Valid,
                  Act::Relu});
            push({"patch1_act", LayerKind::Activation, 1, 1, 0, Padding::Valid, Act::Relu});
            check_kernel(cfg.patch_kernel2, "patch2");
            push({"patch2_dw", LayerKind::DepthwiseConv, cfg.patch_kernel2, cfg.patch_stride2, 0,
                  Padding::Valid, Act::Relu});
            push({"patch2_pw", LayerKind::PointwiseConv, 1, 1, cfg.patch_channels, Padding::Valid,
                  Act::Relu});
            push({"patch2_act", LayerKind::Activation, 1, 1, 0, Padding::Valid, Act::Relu});
            push({"patch3_pw", LayerKind::PointwiseConv, 1, 1, cfg.patch_channels, Padding::Valid,
                  Act::Relu});
            push({"patch3_act", LayerKind::Activation, 1, 1, 0, Padding::Valid, Act::Relu});
        }
    }

    push({"gap", LayerKind::GlobalAvgPool});
    if (cfg.use_attention_classifier) {
        push({"fc1", LayerKind::Dense, 1, 1, cfg.hidden_width, Padding::Valid, Act::Relu});
        push({"fc1_act", LayerKind::Activation, 1, 1, 0, Padding::Valid, Act::Relu});
        push({"attn", LayerKind::Attention});
        push({"fc2", LayerKind::Dense, 1, 1, cfg.num_classes});
    } else {
        push({"fc2", LayerKind::Dense, 1, 1, cfg.num_classes});
    }
    push({"softmax", LayerKind::Softmax});

    // Parameter creation in layer order; shapes re-derived by a second
    // shape pass so depthwise channel counts are known.
    detail::ShapeHWC s{cfg.input_size, cfg.input_size, cfg.input_channels};
    int flat_features = 0;  // channel count after GAP
    for (const auto& def : model.layers) {
        switch (def.kind) {
            case LayerKind::Conv:
            case LayerKind::PointwiseConv: {
                const int cin = s.c, cout = def.out_channels;
                const double std =
                    cfg.weight_init == WeightInit::FanIn
                        ? std::sqrt(2.0 / (double(def.kernel) * def.kernel * cin))
                        : cfg.init_std;
                model.params.add(def.name + ".w",
                                 rand_truncated_normal<Scalar>(
                                     rng, {def.kernel, def.kernel, cin, cout}, 0.0, std),
                                 true, ParamKind::Weight);
                model.params.add(def.name + ".b", Tensor<Scalar>({cout}, Scalar(0)), true,
                                 ParamKind::Bias);
                break;
            }
            case LayerKind::DepthwiseConv: {
                // Depthwise filters act per channel: fan-in is the window.
                const double std = cfg.weight_init == WeightInit::FanIn
                                       ? std::sqrt(2.0 / (double(def.kernel) * def.kernel))
                                       : cfg.init_std;
                model.params.add(def.name + ".w",
                                 rand_truncated_normal<Scalar>(
                                     rng, {def.kernel, def.kernel, s.c, 1}, 0.0, std),
                                 true, ParamKind::Weight);
                break;
            }
            case LayerKind::BatchNorm:
                model.params.add(def.name + ".gamma", Tensor<Scalar>({s.c}, Scalar(1)), true,
                                 ParamKind::BnGamma);
                model.params.add(def.name + ".beta", Tensor<Scalar>({s.c}, Scalar(0)), true,
                                 ParamKind::BnBeta);
                model.params.add(def.name + ".moving_mean", Tensor<Scalar>({s.c}, Scalar(0)), false,
                                 ParamKind::BnMoving);
                model.params.add(def.name + ".moving_var", Tensor<Scalar>({s.c}, Scalar(1)), false,
                                 ParamKind::BnMoving);
                break;
            case LayerKind::Dense: {
                const int din = flat_features, dout = def.out_channels;
                const double std = cfg.weight_init == WeightInit::FanIn
                                       ? std::sqrt(2.0 / static_cast<double>(din))
                                       : cfg.init_std;
                model.params.add(def.name + ".w",
                                 rand_truncated_normal<Scalar>(rng, {din, dout}, 0.0, std), true,
                                 ParamKind::Weight);
                model.params.add(def.name + ".b", Tensor<Scalar>({dout}, Scalar(0)), true,
                                 ParamKind::Bias);
                flat_features = dout;
                break;
            }
            case LayerKind::Attention:
                if (cfg.attention_scale_mode == AttentionScale::LearnedScalar)
                    model.params.add("attn.log_scale", Tensor<Scalar>({1}, Scalar(0)), true,
                                     ParamKind::Weight);
                break;
            default:
                break;
        }
        s = detail::shape_after(def, s);
        if (def.kind == LayerKind::GlobalAvgPool) flat_features = s.c;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Freezing.

// Unfreezes the last `unfreeze_top_n` records of the flattened layer list
// (conv, batch-norm, activation, dense, and attention records each count as
// one). Backbone records outside that suffix are frozen; the patch block
// and classifier are always trainable, so n = 0 is the stage-1 setup.
// Moving statistics stay non-trainable regardless.
template <class Scalar>
void set_trainable(Model<Scalar>& model, int unfreeze_top_n) {
    int total = 0;
    for (const auto& def : model.layers)
        if (is_counted_record(def.kind)) ++total;
    if (unfreeze_top_n < 0 || unfreeze_top_n > total)
        throw ConfigError("set_trainable: unfreeze_top_n " + std::to_string(unfreeze_top_n) +
                          " out of range [0," + std::to_string(total) + "]");
    int record = 0;
    for (const auto& def : model.layers) {
        if (!is_counted_record(def.kind)) continue;
        const bool in_suffix = record >= total - unfreeze_top_n;
        const bool trainable = in_suffix || !def.backbone;
        for (const auto& pname : model.layer_param_names(def)) {
            auto& entry = model.params.at(pname);
            entry.trainable = trainable && entry.kind != ParamKind::BnMoving;
        }
        ++record;
    }
}

// Number of records in the flattened unfreeze enumeration.
template <class Scalar>
int counted_records(const Model<Scalar>& model) {
    int total = 0;
    for (const auto& def : model.layers)
        if (is_counted_record(def.kind)) ++total;
    return total;
}

// ---------------------------------------------------------------------------
// Parameter accounting.

struct ParamRow {
    std::string name;
    std::string shape;
    Index count = 0;
    bool trainable = false;
};

struct ParamCountReport {
    std::vector<ParamRow> rows;
    Index trainable = 0;
    Index non_trainable = 0;
    Index total = 0;
};

template <class Scalar>
ParamCountReport param_count(const Model<Scalar>& model) {
    ParamCountReport report;
    for (const auto& entry : model.params.entries()) {
        report.rows.push_back(
            {entry.name, entry.value.shape_string(), entry.value.size(), entry.trainable});
        report.total += entry.value.size();
        if (entry.trainable)
            report.trainable += entry.value.size();
        else
            report.non_trainable += entry.value.size();
    }
    return report;
}

}  // namespace pattlite
