#pragma once

// Independent reference implementations the production kernels are checked
// against. Everything here is deliberately naive (plain nested loops,
// direct formulas) and shares no code with the library paths it verifies.

#include <cmath>
#include <functional>
#include <vector>

#include "pattlite/ops.hpp"

namespace oracle {

using pattlite::ConvGeometry;
using pattlite::Index;
using pattlite::Tensor;

// Triple-loop matrix product.
template <class Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<Scalar> out({m, n}, Scalar(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
                acc += static_cast<double>(a(i, t)) * static_cast<double>(b(t, j));
            out(i, j) = static_cast<Scalar>(acc);
        }
    return out;
}

// Direct summation mean over the listed axes.
template <class Scalar>
Tensor<Scalar> reduce_mean(const Tensor<Scalar>& x, const std::vector<int>& axes) {
    std::vector<bool> reduced(static_cast<std::size_t>(x.rank()), false);
    for (int a : axes) reduced[static_cast<std::size_t>(a)] = true;
    std::vector<int> out_shape;
    for (int a = 0; a < x.rank(); ++a)
        if (!reduced[static_cast<std::size_t>(a)]) out_shape.push_back(x.extent(a));
    Tensor<double> acc(out_shape, 0.0);
    Index reduce_count = x.size() / acc.size();
    for (Index i = 0; i < x.size(); ++i) {
        const auto c = x.coords(i);
        Index o = 0;
        for (int a = 0; a < x.rank(); ++a)
            if (!reduced[static_cast<std::size_t>(a)]) o = o * x.extent(a) + c[static_cast<std::size_t>(a)];
        acc[o] += static_cast<double>(x[i]);
    }
    Tensor<Scalar> out(out_shape);
    for (Index i = 0; i < out.size(); ++i)
        out[i] = static_cast<Scalar>(acc[i] / static_cast<double>(reduce_count));
    return out;
}

// Six-nested-loop standard convolution (cross-correlation), NHWC input and
// [kh,kw,Cin,Cout] weights, zero padding per geometry.
template <class Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weights,
                      const Tensor<Scalar>* bias, int stride, pattlite::Padding padding) {
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2), cin = x.extent(3);
    const int kh = weights.extent(0), kw = weights.extent(1), cout = weights.extent(3);
    const ConvGeometry g = pattlite::conv_geometry(h, w, kh, kw, stride, padding);
    Tensor<Scalar> out({n, g.out_h, g.out_w, cout}, Scalar(0));
    for (int in = 0; in < n; ++in)
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow)
                for (int oc = 0; oc < cout; ++oc) {
                    double acc = bias ? static_cast<double>((*bias)(oc)) : 0.0;
                    for (int ih = 0; ih < kh; ++ih)
                        for (int iw = 0; iw < kw; ++iw)
                            for (int ic = 0; ic < cin; ++ic) {
                                const int sy = oh * stride - g.pad_top + ih;
                                const int sx = ow * stride - g.pad_left + iw;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                acc += static_cast<double>(x(in, sy, sx, ic)) *
                                       static_cast<double>(weights(ih, iw, ic, oc));
                            }
                    out(in, oh, ow, oc) = static_cast<Scalar>(acc);
                }
    return out;
}

// Per-channel loop depthwise convolution, [kh,kw,C,1] weights.
template <class Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, int stride,
                                pattlite::Padding padding) {
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    const int kh = weights.extent(0), kw = weights.extent(1);
    const ConvGeometry g = pattlite::conv_geometry(h, w, kh, kw, stride, padding);
    Tensor<Scalar> out({n, g.out_h, g.out_w, c}, Scalar(0));
    for (int in = 0; in < n; ++in)
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow)
                for (int ic = 0; ic < c; ++ic) {
                    double acc = 0.0;
                    for (int ih = 0; ih < kh; ++ih)
                        for (int iw = 0; iw < kw; ++iw) {
                            const int sy = oh * stride - g.pad_top + ih;
                            const int sx = ow * stride - g.pad_left + iw;
                            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                            acc += static_cast<double>(x(in, sy, sx, ic)) *
                                   static_cast<double>(weights(ih, iw, ic, 0));
                        }
                    out(in, oh, ow, ic) = static_cast<Scalar>(acc);
                }
    return out;
}

// Direct-formula softmax in 64-bit (no max subtraction; inputs kept small).
inline std::vector<double> softmax_direct(const std::vector<double>& logits) {
    double sum = 0.0;
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i]);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

// Direct-formula mean cross entropy from probabilities.
inline double sparse_ce_direct(const std::vector<std::vector<double>>& logits,
                               const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const auto p = softmax_direct(logits[i]);
        total += -std::log(p[static_cast<std::size_t>(labels[i])]);
    }
    return total / static_cast<double>(logits.size());
}

// Scalar batch-norm formula oracle: (x - mu)/sqrt(var + eps) * gamma + beta.
inline double bn_formula(double x, double mean, double var, double eps, double gamma,
                         double beta) {
    return (x - mean) / std::sqrt(var + eps) * gamma + beta;
}

// Central finite difference of a scalar-valued function with respect to one
// coordinate of `x`, in 64-bit.
inline double central_diff(std::function<double()> f, double& x, double step = 1e-5) {
    const double saved = x;
    x = saved + step;
    const double hi = f();
    x = saved - step;
    const double lo = f();
    x = saved;
    return (hi - lo) / (2.0 * step);
}

// Checks every coordinate of an analytic gradient against central
// differences; returns the worst relative error (denominator floored).
inline double max_grad_rel_error(std::function<double()> loss, pattlite::Tensor<double>& x,
                                 const pattlite::Tensor<double>& analytic, double step = 1e-5,
                                 double floor = 1e-6) {
    double worst = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
        const double numeric = central_diff(loss, x[i], step);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), floor});
        worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace oracle
