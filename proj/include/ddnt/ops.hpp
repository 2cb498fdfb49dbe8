// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Primitive numerical kernels over NHWC tensors.
 *
 * Every forward kernel here is a pure function. Kernels whose adjoint is not
 * a one-liner have an explicit `*_backward` companion used by the autodiff
 * layer. Convolutions are cross-correlations (no kernel flip); `same`
 * padding is symmetric zero padding of (k-1)/2, which requires odd kernels
 * and yields ceil(in/stride) outputs.
 */
#pragma once

#include "ddnt/tensor.hpp"

#include <optional>
#include <vector>

namespace ddnt::ops {

enum class Padding { same, valid };

/// Resize factors used by the multi-scale fusion.
enum class Scale { up2, up4, down2 };

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                            Padding pad);

// ---------------------------------------------------------------- convolution

/// x [N,H,W,Cin], w [kh,kw,Cin,Cout], b [Cout] or empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &w, const Tensor<T> &b,
                 std::size_t stride, Padding pad);

template <typename T> struct ConvGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T> &x, const Tensor<T> &w,
                             bool has_bias, const Tensor<T> &dy,
                             std::size_t stride, Padding pad);

/// x [N,H,W,C], w [kh,kw,C], b [C] or empty. One filter per channel.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T> &x, const Tensor<T> &w,
                           const Tensor<T> &b, std::size_t stride,
                           Padding pad);

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const Tensor<T> &x, const Tensor<T> &w,
                                       bool has_bias, const Tensor<T> &dy,
                                       std::size_t stride, Padding pad);

/// Transposed convolution with no padding: out = (in-1)*stride + k.
/// w [kh,kw,Cin,Cout]. With k == stride this is an exact upsampler.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T> &x, const Tensor<T> &w,
                           const Tensor<T> &b, std::size_t stride);

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T> &x, const Tensor<T> &w,
                                       bool has_bias, const Tensor<T> &dy,
                                       std::size_t stride);

/// 1-D zero-padded cross-correlation along the last (channel) axis. Every
/// leading index is an independent sequence. kw must be odd.
template <typename T>
Tensor<T> conv1d_channels(const Tensor<T> &x, const Tensor<T> &w);

template <typename T> struct Conv1dGrads {
  Tensor<T> dx, dw;
};

template <typename T>
Conv1dGrads<T> conv1d_channels_backward(const Tensor<T> &x,
                                        const Tensor<T> &w,
                                        const Tensor<T> &dy);

// ------------------------------------------------------------- normalization

template <typename T> struct LayerNormCache {
  std::vector<T> mean, rstd; // one per position
};

/// Normalizes over the last axis, then applies gamma/beta of shape [C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma,
                     const Tensor<T> &beta, T eps,
                     LayerNormCache<T> *cache = nullptr);

template <typename T> struct LayerNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T> &x,
                                      const Tensor<T> &gamma,
                                      const LayerNormCache<T> &cache,
                                      const Tensor<T> &dy);

// --------------------------------------------------------------- activations

template <typename T> T gelu(T x);
template <typename T> T gelu_grad(T x);
template <typename T> T sigmoid(T x);

template <typename T> Tensor<T> gelu(const Tensor<T> &x);
template <typename T> Tensor<T> sigmoid(const Tensor<T> &x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T> &x, T slope);

/// Max-subtracted softmax over the last axis.
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T> &x);

/// Given y = softmax(x) and dL/dy, returns dL/dx = y * (g - sum(g*y)).
template <typename T>
Tensor<T> softmax_lastdim_backward(const Tensor<T> &y, const Tensor<T> &dy);

// ----------------------------------------------------------------- reduction

/// [N,H,W,C] -> [N,1,1,C].
template <typename T> Tensor<T> global_avg_pool(const Tensor<T> &x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Shape &x_shape, const Tensor<T> &dy);

// ------------------------------------------------------------------ resizing

/// Bilinear, align_corners=false, no antialiasing.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T> &x, std::size_t out_h,
                          std::size_t out_w);
template <typename T>
Tensor<T> resize_bilinear_backward(const Shape &x_shape, const Tensor<T> &dy);

template <typename T> Tensor<T> resize(const Tensor<T> &x, Scale s);
Shape scaled_shape(const Shape &x_shape, Scale s);

// --------------------------------------------------------------- elementwise

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b);
/// Elementwise product. b may be [N,1,1,C] and is broadcast over H and W.
template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
/// Sums a [N,H,W,C] gradient down to the [N,1,1,C] broadcast shape.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T> &g, const Shape &target);
template <typename T> Tensor<T> scale(const Tensor<T> &a, T s);

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T> *> &xs);
template <typename T>
Tensor<T> slice_channels(const Tensor<T> &x, std::size_t begin,
                         std::size_t count);
/// Splits the channel axis into two equal halves.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels_half(const Tensor<T> &x);

// ---------------------------------------------------------- padding/cropping

/// Reflect padding (edge not repeated) on the bottom/right of H and W.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T> &x, std::size_t pad_h, std::size_t pad_w);
template <typename T>
Tensor<T> reflect_pad_backward(const Shape &x_shape, const Tensor<T> &dy);
template <typename T>
Tensor<T> crop(const Tensor<T> &x, std::size_t h, std::size_t w);

} // namespace ddnt::ops
