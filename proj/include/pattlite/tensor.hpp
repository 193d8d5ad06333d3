#pragma once

// Dense row-major N-dimensional tensor templated on scalar. Four-dimensional
// tensors use the layout (batch N, height H, width W, channels C); lower
// ranks are allowed, down to rank 0 (a scalar). Operations are free
// functions returning new tensors; nothing here mutates its inputs.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pattlite/common.hpp"
#include "pattlite/rng.hpp"

namespace pattlite {

template <class Scalar>
class Tensor {
public:
    using MatrixMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatrixMap =
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape, Scalar fill = Scalar(0))
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    static Tensor from_data(std::vector<int> shape, std::vector<Scalar> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (static_cast<Index>(data.size()) != checked_size(t.shape_))
            throw ShapeError("Tensor::from_data: buffer length does not match shape");
        t.data_ = std::move(data);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    Index size() const { return static_cast<Index>(data_.size()); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::vector<Scalar>& values() { return data_; }
    const std::vector<Scalar>& values() const { return data_; }

    Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    // Unchecked fast paths for the common ranks.
    Scalar& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    const Scalar& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }
    Scalar& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    const Scalar& operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    Scalar& operator()(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const Scalar& operator()(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    Scalar& operator()(int i, int j, int k, int l) {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const Scalar& operator()(int i, int j, int k, int l) const {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    Index flat_index(const std::vector<int>& coords) const {
        if (static_cast<int>(coords.size()) != rank())
            throw ShapeError("Tensor::flat_index: coordinate rank mismatch");
        Index flat = 0;
        for (int a = 0; a < rank(); ++a) {
            if (coords[a] < 0 || coords[a] >= shape_[a])
                throw ShapeError("Tensor::flat_index: coordinate out of range");
            flat = flat * shape_[a] + coords[a];
        }
        return flat;
    }

    std::vector<int> coords(Index flat) const {
        std::vector<int> c(shape_.size());
        for (int a = rank() - 1; a >= 0; --a) {
            c[a] = static_cast<int>(flat % shape_[a]);
            flat /= shape_[a];
        }
        return c;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(std::vector<int> shape) const {
        if (checked_size(shape) != size())
            throw ShapeError("Tensor::reshaped: element count changed");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    // Eigen views over the flat buffer (matrix ops on 2-D tensors, GEMM
    // kernels inside conv/dense layers).
    ConstMatrixMap matrix(int rows, int cols) const {
        if (static_cast<Index>(rows) * cols != size())
            throw ShapeError("Tensor::matrix: view extent mismatch");
        return ConstMatrixMap(data(), rows, cols);
    }
    MatrixMap matrix(int rows, int cols) {
        if (static_cast<Index>(rows) * cols != size())
            throw ShapeError("Tensor::matrix: view extent mismatch");
        return MatrixMap(data(), rows, cols);
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << ',';
            os << shape_[i];
        }
        os << ']';
        return os.str();
    }

private:
    static Index checked_size(const std::vector<int>& shape) {
        Index n = 1;
        for (int e : shape) {
            if (e < 1) throw ShapeError("Tensor: every extent must be >= 1");
            n *= e;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<Scalar> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <class Scalar>
bool all_finite(const Tensor<Scalar>& t) {
    for (Index i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

template <class Scalar>
void ensure_finite(const Tensor<Scalar>& t, const char* context) {
    if (!all_finite(t)) throw DivergenceError(std::string("non-finite values in ") + context);
}

// ---------------------------------------------------------------------------
// Primitive array operations.

// Zero-pads the spatial axes of an NHWC tensor. New cells are exactly zero.
template <class Scalar>
Tensor<Scalar> pad2d(const Tensor<Scalar>& x, int pad_top, int pad_bottom, int pad_left,
                     int pad_right) {
    if (x.rank() != 4) throw ShapeError("pad2d: input must be 4-D NHWC, got " + x.shape_string());
    if (pad_top < 0 || pad_bottom < 0 || pad_left < 0 || pad_right < 0)
        throw ShapeError("pad2d: pads must be >= 0");
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor<Scalar> out({n, h + pad_top + pad_bottom, w + pad_left + pad_right, c});
    for (int in = 0; in < n; ++in)
        for (int ih = 0; ih < h; ++ih) {
            const Scalar* src = &x(in, ih, 0, 0);
            Scalar* dst = &out(in, ih + pad_top, pad_left, 0);
            std::copy(src, src + static_cast<std::size_t>(w) * c, dst);
        }
    return out;
}

// Inverse of pad2d on values: drops `pad_*` cells from each spatial border.
template <class Scalar>
Tensor<Scalar> crop2d(const Tensor<Scalar>& x, int pad_top, int pad_bottom, int pad_left,
                      int pad_right) {
    if (x.rank() != 4) throw ShapeError("crop2d: input must be 4-D NHWC");
    const int n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    const int oh = h - pad_top - pad_bottom, ow = w - pad_left - pad_right;
    if (oh < 1 || ow < 1) throw ShapeError("crop2d: crop exceeds input extent");
    Tensor<Scalar> out({n, oh, ow, c});
    for (int in = 0; in < n; ++in)
        for (int ih = 0; ih < oh; ++ih) {
            const Scalar* src = &x(in, ih + pad_top, pad_left, 0);
            Scalar* dst = &out(in, ih, 0, 0);
            std::copy(src, src + static_cast<std::size_t>(ow) * c, dst);
        }
    return out;
}

// Standard matrix product of two 2-D tensors via Eigen.
template <class Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: inputs must be 2-D");
    if (a.extent(1) != b.extent(0))
        throw ShapeError("matmul: inner extents disagree: " + a.shape_string() + " x " +
                         b.shape_string());
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<Scalar> out({m, n});
    out.matrix(m, n).noalias() = a.matrix(m, k) * b.matrix(k, n);
    return out;
}

// Arithmetic mean over the listed axes; reduced axes are removed.
template <class Scalar>
Tensor<Scalar> reduce_mean(const Tensor<Scalar>& x, const std::vector<int>& axes) {
    std::vector<bool> reduced(static_cast<std::size_t>(x.rank()), false);
    for (int a : axes) {
        if (a < 0 || a >= x.rank()) throw ShapeError("reduce_mean: axis out of range");
        if (reduced[static_cast<std::size_t>(a)]) throw ShapeError("reduce_mean: duplicate axis");
        reduced[static_cast<std::size_t>(a)] = true;
    }
    std::vector<int> out_shape;
    Index reduce_count = 1;
    for (int a = 0; a < x.rank(); ++a) {
        if (reduced[static_cast<std::size_t>(a)])
            reduce_count *= x.extent(a);
        else
            out_shape.push_back(x.extent(a));
    }
    Tensor<Scalar> out(out_shape, Scalar(0));
    std::vector<int> c;
    for (Index i = 0; i < x.size(); ++i) {
        c = x.coords(i);
        Index o = 0;
        for (int a = 0; a < x.rank(); ++a)
            if (!reduced[static_cast<std::size_t>(a)]) o = o * x.extent(a) + c[static_cast<std::size_t>(a)];
        out[o] += x[i];
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(reduce_count);
    for (Index i = 0; i < out.size(); ++i) out[i] *= inv;
    return out;
}

// ---------------------------------------------------------------------------
// Seeded random tensors.

template <class Scalar>
Tensor<Scalar> rand_uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("rand_uniform: require lo < hi");
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i)
        t[i] = static_cast<Scalar>(lo + (hi - lo) * rng.next_double());
    return t;
}

template <class Scalar>
Tensor<Scalar> rand_normal(Rng& rng, std::vector<int> shape, double mean, double std) {
    if (std < 0.0) throw ConfigError("rand_normal: require std >= 0");
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.normal(mean, std));
    return t;
}

template <class Scalar>
Tensor<Scalar> rand_truncated_normal(Rng& rng, std::vector<int> shape, double mean, double std) {
    if (std < 0.0) throw ConfigError("rand_truncated_normal: require std >= 0");
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i)
        t[i] = static_cast<Scalar>(rng.truncated_normal(mean, std));
    return t;
}

}  // namespace pattlite
