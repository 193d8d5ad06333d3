#pragma once

// Reverse-mode vector-Jacobian products for each forward kernel in ops.hpp.
// The network is a fixed feed-forward chain, so these are composed layer by
// layer by the model module rather than by a taped autodiff graph.

#include <vector>

#include "pattlite/ops.hpp"

namespace pattlite {

template <class Scalar>
struct ConvGrads {
    Tensor<Scalar> input;    // dL/dx
    Tensor<Scalar> weights;  // dL/dW
    Tensor<Scalar> bias;     // dL/db (empty when the kernel has no bias)
};

template <class Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                  const Tensor<Scalar>& upstream) {
    const int kh = k.weights.extent(0), kw = k.weights.extent(1);
    const int cin = k.weights.extent(2), cout = k.weights.extent(3);
    const int n = x.extent(0);
    const ConvGeometry g = conv_geometry(x.extent(1), x.extent(2), kh, kw, k.stride, k.padding);
    const int rows = n * g.out_h * g.out_w, inner = kh * kw * cin;

    // dW = col(x)^T * dOut; dX = col2im(dOut * W^T).
    const Tensor<Scalar> col = detail::im2col(x, kh, kw, k.stride, g);
    ConvGrads<Scalar> grads;
    grads.weights = Tensor<Scalar>({kh, kw, cin, cout});
    grads.weights.matrix(inner, cout).noalias() =
        col.matrix(rows, inner).transpose() * upstream.matrix(rows, cout);

    Tensor<Scalar> dcol({rows, inner});
    dcol.matrix(rows, inner).noalias() =
        upstream.matrix(rows, cout) * k.weights.matrix(inner, cout).transpose();
    grads.input = Tensor<Scalar>(x.shape(), Scalar(0));
    detail::col2im_accumulate(dcol, kh, kw, k.stride, g, grads.input);

    if (k.bias) {
        grads.bias = Tensor<Scalar>({cout});
        grads.bias.matrix(1, cout).row(0) = upstream.matrix(rows, cout).colwise().sum();
    }
    return grads;
}

template <class Scalar>
ConvGrads<Scalar> depthwise_conv2d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                            const Tensor<Scalar>& upstream) {
    const int kh = k.weights.extent(0), kw = k.weights.extent(1), c = k.weights.extent(2);
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2);
    const ConvGeometry g = conv_geometry(h, w, kh, kw, k.stride, k.padding);
    ConvGrads<Scalar> grads;
    grads.input = Tensor<Scalar>(x.shape(), Scalar(0));
    grads.weights = Tensor<Scalar>(k.weights.shape(), Scalar(0));
    for (int in = 0; in < n; ++in)
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow) {
                const Scalar* up = &upstream(in, oh, ow, 0);
                for (int ih = 0; ih < kh; ++ih) {
                    const int src_h = oh * k.stride - g.pad_top + ih;
                    if (src_h < 0 || src_h >= h) continue;
                    for (int iw = 0; iw < kw; ++iw) {
                        const int src_w = ow * k.stride - g.pad_left + iw;
                        if (src_w < 0 || src_w >= w) continue;
                        const Scalar* src = &x(in, src_h, src_w, 0);
                        Scalar* dsrc = &grads.input(in, src_h, src_w, 0);
                        const Scalar* wgt = &k.weights(ih, iw, 0, 0);
                        Scalar* dwgt = &grads.weights(ih, iw, 0, 0);
                        for (int ic = 0; ic < c; ++ic) {
                            dsrc[ic] += up[ic] * wgt[ic];
                            dwgt[ic] += up[ic] * src[ic];
                        }
                    }
                }
            }
    return grads;
}

template <class Scalar>
struct BatchNormGrads {
    Tensor<Scalar> input, gamma, beta;
};

// Infer mode is an affine map with constant per-channel scale.
template <class Scalar>
BatchNormGrads<Scalar> batch_norm_backward_infer(const Tensor<Scalar>& x,
                                                 const BatchNormState<Scalar>& s,
                                                 const Tensor<Scalar>& upstream) {
    const int c = x.extent(3);
    BatchNormGrads<Scalar> grads;
    grads.input = Tensor<Scalar>(x.shape());
    grads.gamma = Tensor<Scalar>({c}, Scalar(0));
    grads.beta = Tensor<Scalar>({c}, Scalar(0));
    std::vector<Scalar> inv_std(static_cast<std::size_t>(c));
    for (int ic = 0; ic < c; ++ic)
        inv_std[static_cast<std::size_t>(ic)] =
            Scalar(1) / std::sqrt(s.moving_var[ic] + s.epsilon);
    for (Index i = 0; i < x.size(); ++i) {
        const int ic = static_cast<int>(i % c);
        const Scalar istd = inv_std[static_cast<std::size_t>(ic)];
        const Scalar xhat = (x[i] - s.moving_mean[ic]) * istd;
        grads.input[i] = upstream[i] * s.gamma[ic] * istd;
        grads.gamma[ic] += upstream[i] * xhat;
        grads.beta[ic] += upstream[i];
    }
    return grads;
}

// Full train-mode backward through the batch statistics. `batch_mean` and
// `batch_var` must be the statistics the forward pass normalized with.
template <class Scalar>
BatchNormGrads<Scalar> batch_norm_backward_train(const Tensor<Scalar>& x,
                                                 const BatchNormState<Scalar>& s,
                                                 const Tensor<Scalar>& batch_mean,
                                                 const Tensor<Scalar>& batch_var,
                                                 const Tensor<Scalar>& upstream) {
    const int c = x.extent(3);
    const Scalar m = static_cast<Scalar>(x.size() / c);
    BatchNormGrads<Scalar> grads;
    grads.input = Tensor<Scalar>(x.shape());
    grads.gamma = Tensor<Scalar>({c}, Scalar(0));
    grads.beta = Tensor<Scalar>({c}, Scalar(0));
    std::vector<Scalar> inv_std(static_cast<std::size_t>(c));
    std::vector<Scalar> dxhat_sum(static_cast<std::size_t>(c), Scalar(0));
    std::vector<Scalar> dxhat_xhat_sum(static_cast<std::size_t>(c), Scalar(0));
    for (int ic = 0; ic < c; ++ic)
        inv_std[static_cast<std::size_t>(ic)] = Scalar(1) / std::sqrt(batch_var[ic] + s.epsilon);
    for (Index i = 0; i < x.size(); ++i) {
        const int ic = static_cast<int>(i % c);
        const Scalar xhat = (x[i] - batch_mean[ic]) * inv_std[static_cast<std::size_t>(ic)];
        const Scalar dxhat = upstream[i] * s.gamma[ic];
        grads.gamma[ic] += upstream[i] * xhat;
        grads.beta[ic] += upstream[i];
        dxhat_sum[static_cast<std::size_t>(ic)] += dxhat;
        dxhat_xhat_sum[static_cast<std::size_t>(ic)] += dxhat * xhat;
    }
    for (Index i = 0; i < x.size(); ++i) {
        const int ic = static_cast<int>(i % c);
        const Scalar istd = inv_std[static_cast<std::size_t>(ic)];
        const Scalar xhat = (x[i] - batch_mean[ic]) * istd;
        const Scalar dxhat = upstream[i] * s.gamma[ic];
        grads.input[i] = (istd / m) * (m * dxhat - dxhat_sum[static_cast<std::size_t>(ic)] -
                                       xhat * dxhat_xhat_sum[static_cast<std::size_t>(ic)]);
    }
    return grads;
}

// Upstream masked by (x > 0).
template <class Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& upstream) {
    Tensor<Scalar> out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = x[i] > Scalar(0) ? upstream[i] : Scalar(0);
    return out;
}

template <class Scalar>
Tensor<Scalar> relu6_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& upstream) {
    Tensor<Scalar> out(x.shape());
    for (Index i = 0; i < x.size(); ++i)
        out[i] = (x[i] > Scalar(0) && x[i] < Scalar(6)) ? upstream[i] : Scalar(0);
    return out;
}

template <class Scalar>
Tensor<Scalar> global_average_pool_backward(const std::vector<int>& input_shape,
                                            const Tensor<Scalar>& upstream) {
    const int n = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3];
    Tensor<Scalar> out({n, h, w, c});
    const Scalar inv = Scalar(1) / static_cast<Scalar>(h * w);
    for (int in = 0; in < n; ++in)
        for (int ih = 0; ih < h; ++ih)
            for (int iw = 0; iw < w; ++iw) {
                Scalar* dst = &out(in, ih, iw, 0);
                const Scalar* src = &upstream(in, 0);
                for (int ic = 0; ic < c; ++ic) dst[ic] = src[ic] * inv;
            }
    return out;
}

template <class Scalar>
struct DenseGrads {
    Tensor<Scalar> input, weights, bias;
};

template <class Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                                  const Tensor<Scalar>& upstream) {
    const int n = x.extent(0), din = x.extent(1), dout = w.extent(1);
    DenseGrads<Scalar> grads;
    grads.input = Tensor<Scalar>({n, din});
    grads.input.matrix(n, din).noalias() =
        upstream.matrix(n, dout) * w.matrix(din, dout).transpose();
    grads.weights = Tensor<Scalar>({din, dout});
    grads.weights.matrix(din, dout).noalias() =
        x.matrix(n, din).transpose() * upstream.matrix(n, dout);
    grads.bias = Tensor<Scalar>({dout});
    grads.bias.matrix(1, dout).row(0) = upstream.matrix(n, dout).colwise().sum();
    return grads;
}

// dx = y .* (dy - sum(dy .* y)) per row, where y = softmax(x).
template <class Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& upstream) {
    const int d = y.extent(y.rank() - 1);
    Tensor<Scalar> out(y.shape());
    for (Index row = 0; row < y.size() / d; ++row) {
        const Scalar* yv = y.data() + row * d;
        const Scalar* up = upstream.data() + row * d;
        Scalar* o = out.data() + row * d;
        Scalar dot = Scalar(0);
        for (int i = 0; i < d; ++i) dot += up[i] * yv[i];
        for (int i = 0; i < d; ++i) o[i] = yv[i] * (up[i] - dot);
    }
    return out;
}

template <class Scalar>
struct AttentionGrads {
    Tensor<Scalar> q, k, v;
    Scalar scale = Scalar(0);  // dL/dscale
};

template <class Scalar>
AttentionGrads<Scalar> scaled_dot_attention_backward(const Tensor<Scalar>& q,
                                                     const Tensor<Scalar>& k,
                                                     const Tensor<Scalar>& v, Scalar scale,
                                                     const Tensor<Scalar>& weights,
                                                     const Tensor<Scalar>& upstream) {
    const int t = q.extent(0), dq = q.extent(1), dv = v.extent(1);
    AttentionGrads<Scalar> grads;
    // dV = W^T * dOut; dW = dOut * V^T; dScores = softmax VJP of dW.
    grads.v = Tensor<Scalar>({t, dv});
    grads.v.matrix(t, dv).noalias() = weights.matrix(t, t).transpose() * upstream.matrix(t, dv);
    Tensor<Scalar> dweights({t, t});
    dweights.matrix(t, t).noalias() = upstream.matrix(t, dv) * v.matrix(t, dv).transpose();
    Tensor<Scalar> dscores = softmax_backward(weights, dweights);
    grads.q = Tensor<Scalar>({t, dq});
    grads.q.matrix(t, dq).noalias() = scale * (dscores.matrix(t, t) * k.matrix(t, dq));
    grads.k = Tensor<Scalar>({t, dq});
    grads.k.matrix(t, dq).noalias() =
        scale * (dscores.matrix(t, t).transpose() * q.matrix(t, dq));
    // scores = scale * q k^T, so dscale = <dScores, q k^T>.
    Tensor<Scalar> qk({t, t});
    qk.matrix(t, t).noalias() = q.matrix(t, dq) * k.matrix(t, dq).transpose();
    grads.scale = Scalar(0);
    for (Index i = 0; i < qk.size(); ++i) grads.scale += dscores[i] * qk[i];
    return grads;
}

// Gradient of mean sparse cross-entropy taken directly at the logits:
// (softmax(logits) - onehot(label)) / N.
template <class Scalar>
Tensor<Scalar> sparse_ce_backward(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
    const int n = logits.extent(0), d = logits.extent(1);
    Tensor<Scalar> grad = softmax(logits);
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    for (int i = 0; i < n; ++i) {
        Scalar* row = grad.data() + static_cast<Index>(i) * d;
        row[labels[static_cast<std::size_t>(i)]] -= Scalar(1);
        for (int j = 0; j < d; ++j) row[j] *= inv_n;
    }
    return grad;
}

// Gradient of pad2d: crop the padding back off.
template <class Scalar>
Tensor<Scalar> pad2d_backward(const Tensor<Scalar>& upstream, int pad_top, int pad_bottom,
                              int pad_left, int pad_right) {
    return crop2d(upstream, pad_top, pad_bottom, pad_left, pad_right);
}

}  // namespace pattlite
