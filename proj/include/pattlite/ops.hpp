#pragma once

// Forward kernels for every layer type the network uses. All functions are
// pure; batch_norm in train mode is the one operation that also returns a
// moving-statistics update, applied by the caller under the single-writer
// contract. Convolutions run as im2col + Eigen GEMM; the naive-loop
// reference implementations live in the test tree.

#include <cmath>
#include <optional>
#include <vector>

#include "pattlite/tensor.hpp"

namespace pattlite {

enum class Padding { Valid, Same };

template <class Scalar>
struct ConvKernel {
    // Standard/pointwise convs: [kh, kw, Cin, Cout]. Depthwise: [kh, kw, C, 1].
    Tensor<Scalar> weights;
    std::optional<Tensor<Scalar>> bias;  // [Cout]
    int stride = 1;
    Padding padding = Padding::Valid;
};

struct ConvGeometry {
    int out_h = 0, out_w = 0;
    int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
};

// `same` keeps ceil(in/stride) and puts any odd padding cell on the
// bottom/right edge; `valid` is floor((in - k)/stride) + 1.
inline ConvGeometry conv_geometry(int in_h, int in_w, int kh, int kw, int stride, Padding padding) {
    ConvGeometry g;
    if (padding == Padding::Same) {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        const int pad_h = std::max(0, (g.out_h - 1) * stride + kh - in_h);
        const int pad_w = std::max(0, (g.out_w - 1) * stride + kw - in_w);
        g.pad_top = pad_h / 2;
        g.pad_bottom = pad_h - g.pad_top;
        g.pad_left = pad_w / 2;
        g.pad_right = pad_w - g.pad_left;
    } else {
        if (kh > in_h || kw > in_w)
            throw ShapeError("conv: kernel exceeds input under valid padding");
        g.out_h = (in_h - kh) / stride + 1;
        g.out_w = (in_w - kw) / stride + 1;
    }
    return g;
}

namespace detail {

// Unrolls NHWC patches into a [N*Ho*Wo, kh*kw*Cin] row-major matrix whose
// column order matches the [kh, kw, Cin, Cout] weight layout.
template <class Scalar>
Tensor<Scalar> im2col(const Tensor<Scalar>& x, int kh, int kw, int stride, const ConvGeometry& g) {
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor<Scalar> col({n * g.out_h * g.out_w, kh * kw * c}, Scalar(0));
    Index row = 0;
    for (int in = 0; in < n; ++in)
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow, ++row) {
                Scalar* dst = &col[row * static_cast<Index>(kh) * kw * c];
                for (int ih = 0; ih < kh; ++ih) {
                    const int src_h = oh * stride - g.pad_top + ih;
                    if (src_h < 0 || src_h >= h) continue;
                    for (int iw = 0; iw < kw; ++iw) {
                        const int src_w = ow * stride - g.pad_left + iw;
                        if (src_w < 0 || src_w >= w) continue;
                        const Scalar* src = &x(in, src_h, src_w, 0);
                        std::copy(src, src + c, dst + (static_cast<Index>(ih) * kw + iw) * c);
                    }
                }
            }
    return col;
}

// Scatters a column matrix back onto the input layout (transpose of im2col).
template <class Scalar>
void col2im_accumulate(const Tensor<Scalar>& col, int kh, int kw, int stride,
                       const ConvGeometry& g, Tensor<Scalar>& x_grad) {
    const int n = x_grad.extent(0), h = x_grad.extent(1), w = x_grad.extent(2),
              c = x_grad.extent(3);
    Index row = 0;
    for (int in = 0; in < n; ++in)
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow, ++row) {
                const Scalar* src = &col[row * static_cast<Index>(kh) * kw * c];
                for (int ih = 0; ih < kh; ++ih) {
                    const int dst_h = oh * stride - g.pad_top + ih;
                    if (dst_h < 0 || dst_h >= h) continue;
                    for (int iw = 0; iw < kw; ++iw) {
                        const int dst_w = ow * stride - g.pad_left + iw;
                        if (dst_w < 0 || dst_w >= w) continue;
                        Scalar* dst = &x_grad(in, dst_h, dst_w, 0);
                        const Scalar* s = src + (static_cast<Index>(ih) * kw + iw) * c;
                        for (int ic = 0; ic < c; ++ic) dst[ic] += s[ic];
                    }
                }
            }
}

}  // namespace detail

// Direct cross-correlation of an NHWC input with a [kh,kw,Cin,Cout] kernel.
template <class Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be 4-D NHWC");
    if (k.weights.rank() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout]");
    const int kh = k.weights.extent(0), kw = k.weights.extent(1);
    const int cin = k.weights.extent(2), cout = k.weights.extent(3);
    if (x.extent(3) != cin)
        throw ShapeError("conv2d: input channels " + std::to_string(x.extent(3)) +
                         " do not match kernel Cin " + std::to_string(cin));
    const int n = x.extent(0);
    const ConvGeometry g = conv_geometry(x.extent(1), x.extent(2), kh, kw, k.stride, k.padding);
    const Tensor<Scalar> col = detail::im2col(x, kh, kw, k.stride, g);
    const int rows = n * g.out_h * g.out_w, inner = kh * kw * cin;
    Tensor<Scalar> out({n, g.out_h, g.out_w, cout});
    out.matrix(rows, cout).noalias() = col.matrix(rows, inner) * k.weights.matrix(inner, cout);
    if (k.bias) {
        if (k.bias->rank() != 1 || k.bias->extent(0) != cout)
            throw ShapeError("conv2d: bias must be [Cout]");
        auto m = out.matrix(rows, cout);
        m.rowwise() += k.bias->matrix(1, cout).row(0);
    }
    return out;
}

// Per-channel spatial convolution; kernel is [kh, kw, C, 1].
template <class Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
    if (x.rank() != 4) throw ShapeError("depthwise_conv2d: input must be 4-D NHWC");
    if (k.weights.rank() != 4 || k.weights.extent(3) != 1)
        throw ShapeError("depthwise_conv2d: kernel must be [kh,kw,C,1]");
    const int kh = k.weights.extent(0), kw = k.weights.extent(1), c = k.weights.extent(2);
    if (x.extent(3) != c)
        throw ShapeError("depthwise_conv2d: channel mismatch: input " +
                         std::to_string(x.extent(3)) + " vs kernel " + std::to_string(c));
    if (k.bias) throw ShapeError("depthwise_conv2d: depthwise stages carry no bias");
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2);
    const ConvGeometry g = conv_geometry(h, w, kh, kw, k.stride, k.padding);
    Tensor<Scalar> out({n, g.out_h, g.out_w, c}, Scalar(0));
    for (int in = 0; in < n; ++in)
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow) {
                Scalar* dst = &out(in, oh, ow, 0);
                for (int ih = 0; ih < kh; ++ih) {
                    const int src_h = oh * k.stride - g.pad_top + ih;
                    if (src_h < 0 || src_h >= h) continue;
                    for (int iw = 0; iw < kw; ++iw) {
                        const int src_w = ow * k.stride - g.pad_left + iw;
                        if (src_w < 0 || src_w >= w) continue;
                        const Scalar* src = &x(in, src_h, src_w, 0);
                        const Scalar* wgt = &k.weights(ih, iw, 0, 0);
                        for (int ic = 0; ic < c; ++ic) dst[ic] += src[ic] * wgt[ic];
                    }
                }
            }
    return out;
}

// 1x1 convolution: a per-pixel dense map across channels.
template <class Scalar>
Tensor<Scalar> pointwise_conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
    if (k.weights.rank() != 4 || k.weights.extent(0) != 1 || k.weights.extent(1) != 1)
        throw ShapeError("pointwise_conv2d: kernel must be 1x1");
    return conv2d(x, k);
}

// Depthwise followed by pointwise; any bias lives on the pointwise stage.
template <class Scalar>
Tensor<Scalar> separable_conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& dw,
                                const ConvKernel<Scalar>& pw) {
    return pointwise_conv2d(depthwise_conv2d(x, dw), pw);
}

template <class Scalar>
struct BatchNormState {
    Tensor<Scalar> gamma, beta;              // trainable, [C]
    Tensor<Scalar> moving_mean, moving_var;  // non-trainable, [C]
    Scalar momentum = Scalar(0.99);
    Scalar epsilon = Scalar(1e-3);
};

template <class Scalar>
BatchNormState<Scalar> make_batch_norm(int channels) {
    BatchNormState<Scalar> s;
    s.gamma = Tensor<Scalar>({channels}, Scalar(1));
    s.beta = Tensor<Scalar>({channels}, Scalar(0));
    s.moving_mean = Tensor<Scalar>({channels}, Scalar(0));
    s.moving_var = Tensor<Scalar>({channels}, Scalar(1));
    return s;
}

enum class BnMode { Train, Infer };

template <class Scalar>
struct BatchNormResult {
    Tensor<Scalar> output;
    // Batch statistics used for normalization (train mode only).
    Tensor<Scalar> batch_mean, batch_var;
    // Moving statistics after the momentum update (train mode only); the
    // caller decides when to commit them.
    Tensor<Scalar> new_moving_mean, new_moving_var;
};

// Train mode normalizes with biased batch statistics over (N,H,W) and
// reports updated moving stats; infer mode uses the stored statistics only
// and mutates nothing.
template <class Scalar>
BatchNormResult<Scalar> batch_norm(const Tensor<Scalar>& x, const BatchNormState<Scalar>& s,
                                   BnMode mode) {
    if (x.rank() != 4) throw ShapeError("batch_norm: input must be 4-D NHWC");
    const int c = x.extent(3);
    if (s.gamma.extent(0) != c)
        throw ShapeError("batch_norm: channel mismatch between input and state");
    const Index per_channel = x.size() / c;
    BatchNormResult<Scalar> r;
    r.output = Tensor<Scalar>(x.shape());

    const Tensor<Scalar>* mean = &s.moving_mean;
    const Tensor<Scalar>* var = &s.moving_var;
    if (mode == BnMode::Train) {
        if (per_channel == 0) throw ShapeError("batch_norm: zero-size batch in train mode");
        r.batch_mean = Tensor<Scalar>({c}, Scalar(0));
        r.batch_var = Tensor<Scalar>({c}, Scalar(0));
        for (Index i = 0; i < x.size(); ++i) r.batch_mean[i % c] += x[i];
        for (int ic = 0; ic < c; ++ic) r.batch_mean[ic] /= static_cast<Scalar>(per_channel);
        for (Index i = 0; i < x.size(); ++i) {
            const Scalar d = x[i] - r.batch_mean[i % c];
            r.batch_var[i % c] += d * d;
        }
        for (int ic = 0; ic < c; ++ic) r.batch_var[ic] /= static_cast<Scalar>(per_channel);
        r.new_moving_mean = Tensor<Scalar>({c});
        r.new_moving_var = Tensor<Scalar>({c});
        for (int ic = 0; ic < c; ++ic) {
            r.new_moving_mean[ic] =
                s.momentum * s.moving_mean[ic] + (Scalar(1) - s.momentum) * r.batch_mean[ic];
            r.new_moving_var[ic] =
                s.momentum * s.moving_var[ic] + (Scalar(1) - s.momentum) * r.batch_var[ic];
        }
        mean = &r.batch_mean;
        var = &r.batch_var;
    }

    std::vector<Scalar> scale(static_cast<std::size_t>(c)), shift(static_cast<std::size_t>(c));
    for (int ic = 0; ic < c; ++ic) {
        const Scalar inv_std = Scalar(1) / std::sqrt((*var)[ic] + s.epsilon);
        scale[static_cast<std::size_t>(ic)] = s.gamma[ic] * inv_std;
        shift[static_cast<std::size_t>(ic)] =
            s.beta[ic] - (*mean)[ic] * s.gamma[ic] * inv_std;
    }
    for (Index i = 0; i < x.size(); ++i) {
        const int ic = static_cast<int>(i % c);
        r.output[i] = x[i] * scale[static_cast<std::size_t>(ic)] + shift[static_cast<std::size_t>(ic)];
    }
    return r;
}

template <class Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
    Tensor<Scalar> out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = x[i] > Scalar(0) ? x[i] : Scalar(0);
    return out;
}

template <class Scalar>
Tensor<Scalar> relu6(const Tensor<Scalar>& x) {
    Tensor<Scalar> out(x.shape());
    for (Index i = 0; i < x.size(); ++i)
        out[i] = x[i] < Scalar(0) ? Scalar(0) : (x[i] > Scalar(6) ? Scalar(6) : x[i]);
    return out;
}

// Mean over H and W per channel: [N,H,W,C] -> [N,C].
template <class Scalar>
Tensor<Scalar> global_average_pool(const Tensor<Scalar>& x) {
    if (x.rank() != 4) throw ShapeError("global_average_pool: input must be 4-D NHWC");
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor<Scalar> out({n, c}, Scalar(0));
    for (int in = 0; in < n; ++in) {
        Scalar* dst = &out(in, 0);
        for (int ih = 0; ih < h; ++ih)
            for (int iw = 0; iw < w; ++iw) {
                const Scalar* src = &x(in, ih, iw, 0);
                for (int ic = 0; ic < c; ++ic) dst[ic] += src[ic];
            }
        const Scalar inv = Scalar(1) / static_cast<Scalar>(h * w);
        for (int ic = 0; ic < c; ++ic) dst[ic] *= inv;
    }
    return out;
}

// Fully connected layer: x[N,Din] * w[Din,Dout] + b.
template <class Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("dense: expect x[N,Din], w[Din,Dout], b[Dout]");
    if (x.extent(1) != w.extent(0) || w.extent(1) != b.extent(0))
        throw ShapeError("dense: extent mismatch: x " + x.shape_string() + ", w " +
                         w.shape_string());
    Tensor<Scalar> out = matmul(x, w);
    auto m = out.matrix(out.extent(0), out.extent(1));
    m.rowwise() += b.matrix(1, b.extent(0)).row(0);
    return out;
}

// Exp-normalization along the last axis, max-subtracted for stability.
template <class Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
    if (x.rank() < 1) throw ShapeError("softmax: input must have rank >= 1");
    const int d = x.extent(x.rank() - 1);
    Tensor<Scalar> out(x.shape());
    for (Index row = 0; row < x.size() / d; ++row) {
        const Scalar* in = x.data() + row * d;
        Scalar* o = out.data() + row * d;
        Scalar mx = in[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, in[i]);
        Scalar sum = Scalar(0);
        for (int i = 0; i < d; ++i) {
            o[i] = std::exp(in[i] - mx);
            sum += o[i];
        }
        const Scalar inv = Scalar(1) / sum;
        for (int i = 0; i < d; ++i) o[i] *= inv;
    }
    return out;
}

// softmax(scale * Q K^T) V for single-head 2-D Q[T,dq], K[T,dq], V[T,dv].
// Each weight row sums to 1, so outputs are convex combinations of V rows.
template <class Scalar>
struct AttentionResult {
    Tensor<Scalar> output;   // [T, dv]
    Tensor<Scalar> weights;  // [T, T]
};

template <class Scalar>
AttentionResult<Scalar> scaled_dot_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                                             const Tensor<Scalar>& v, Scalar scale) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("scaled_dot_attention: q, k, v must be 2-D");
    if (q.extent(1) != k.extent(1))
        throw ShapeError("scaled_dot_attention: q and k must share feature dim");
    if (k.extent(0) != v.extent(0))
        throw ShapeError("scaled_dot_attention: k and v must share token count");
    if (!(scale > Scalar(0))) throw ShapeError("scaled_dot_attention: scale must be positive");
    Tensor<Scalar> scores({q.extent(0), k.extent(0)});
    scores.matrix(q.extent(0), k.extent(0)).noalias() =
        scale * (q.matrix(q.extent(0), q.extent(1)) * k.matrix(k.extent(0), k.extent(1)).transpose());
    AttentionResult<Scalar> r;
    r.weights = softmax(scores);
    r.output = matmul(r.weights, v);
    return r;
}

// Mean over the batch of -log softmax(logits)[label], in log space.
template <class Scalar>
double sparse_ce_loss(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("sparse_ce_loss: logits must be [N,D]");
    const int n = logits.extent(0), d = logits.extent(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("sparse_ce_loss: label count does not match batch");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= d)
            throw DataError("sparse_ce_loss: label out of range: " +
                            std::to_string(labels[static_cast<std::size_t>(i)]));
        const Scalar* row = logits.data() + static_cast<Index>(i) * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double lse = 0.0;
        for (int j = 0; j < d; ++j) lse += std::exp(static_cast<double>(row[j]) - mx);
        total += (mx + std::log(lse)) - static_cast<double>(row[labels[static_cast<std::size_t>(i)]]);
    }
    return total / n;
}

}  // namespace pattlite
