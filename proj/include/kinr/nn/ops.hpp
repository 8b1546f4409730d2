#pragma once

#include "kinr/nn/autograd.hpp"

#include <cstddef>
#include <vector>

// Differentiable tensor operations. Images are C x H x W, token sequences N x D, all
// row-major. Every op is instantiated for float and double.
namespace kinr::nn {

template <typename T> Var<T> matmul(Var<T> const &a, Var<T> const &b);
// x [N x in] * w [in x out] + b [out]; `b` may be undefined.
template <typename T> Var<T> linear(Var<T> const &x, Var<T> const &w, Var<T> const &b);

template <typename T> Var<T> add(Var<T> const &a, Var<T> const &b);
template <typename T> Var<T> sub(Var<T> const &a, Var<T> const &b);
template <typename T> Var<T> mul(Var<T> const &a, Var<T> const &b);
template <typename T> Var<T> scale(Var<T> const &a, T s);
template <typename T> Var<T> reshape(Var<T> const &a, Shape shape);

template <typename T> Var<T> silu(Var<T> const &x);
template <typename T> Var<T> sigmoid(Var<T> const &x);

// Row-wise normalization over the last dimension of an N x D input.
template <typename T> Var<T> layer_norm(Var<T> const &x, Var<T> const &gamma, Var<T> const &beta, T eps = T(1e-5));

// Multi-head scaled dot-product attention on pre-projected q [N x D], k [M x D], v [M x D].
// Heads split the feature dimension. Rows of q are processed `chunk` at a time against the
// full key set, so results do not depend on the chunk size; only a chunk x M score block is
// ever materialized and it is recomputed during backward.
template <typename T> Var<T> attention(Var<T> const &q, Var<T> const &k, Var<T> const &v, int heads, int chunk);

// x [C x H x W], w [O x C x K x K], b [O] (may be undefined). Zero padding.
template <typename T> Var<T> conv2d(Var<T> const &x, Var<T> const &w, Var<T> const &b, int stride, int pad);
// Bilinear 2x upsampling with half-pixel centers and clamped edges.
template <typename T> Var<T> upsample2x(Var<T> const &x);
// [C x H x W] -> [C]
template <typename T> Var<T> global_avg_pool(Var<T> const &x);
// x [C x H x W] * s[c]
template <typename T> Var<T> scale_channels(Var<T> const &x, Var<T> const &s);
// x [C x H x W] * m[h, w], m shaped [1 x H x W]
template <typename T> Var<T> scale_spatial(Var<T> const &x, Var<T> const &m);
// x [C x H x W] + g[c]
template <typename T> Var<T> add_channel_bias(Var<T> const &x, Var<T> const &g);
// [C x H x W] -> [2 x H x W]: channel mean and channel max.
template <typename T> Var<T> channel_mean_max(Var<T> const &x);

// Centered orthonormal transforms of a [2 x H x W] real/imaginary pair. Each is the other's
// adjoint, which is also its backward.
template <typename T> Var<T> fft2c(Var<T> const &x);
template <typename T> Var<T> ifft2c(Var<T> const &x);

// [H*W x C] -> [C x H x W] and back.
template <typename T> Var<T> rows_to_planes(Var<T> const &x, int height, int width);
template <typename T> Var<T> planes_to_rows(Var<T> const &x);
template <typename T> Var<T> gather_rows(Var<T> const &x, std::vector<std::size_t> const &rows);

// Mean squared difference over all elements; result has shape [1].
template <typename T> Var<T> mse(Var<T> const &a, Var<T> const &b);

} // namespace kinr::nn
