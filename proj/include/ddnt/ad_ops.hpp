// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ad_ops.hpp
 * @brief  Differentiable wrappers over the tensor-core kernels.
 */
#pragma once

#include "ddnt/autodiff.hpp"
#include "ddnt/ops.hpp"

#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace ddnt::ad {

using ops::Padding;
using ops::Scale;

/// Optional bias operand; excluded from template argument deduction.
template <typename T>
using OptVar = std::type_identity_t<std::optional<Var<T>>>;

/// The named parameter if the store holds it (e.g. an optional bias).
template <typename T>
std::optional<Var<T>> optional_param(Tape<T> &tape, const ParamStore<T> &store,
                                     const std::string &name) {
  if (!store.contains(name))
    return std::nullopt;
  return tape.param(store, name);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, OptVar<T> b, std::size_t stride,
              Padding pad);
template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, OptVar<T> b,
                        std::size_t stride, Padding pad);
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, OptVar<T> b,
                        std::size_t stride);
template <typename T> Var<T> conv1d_channels(Var<T> x, Var<T> w);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);

template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, T slope);
template <typename T> Var<T> softmax_lastdim(Var<T> x);

template <typename T> Var<T> global_avg_pool(Var<T> x);
template <typename T> Var<T> resize(Var<T> x, Scale s);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
/// Broadcasts b over H and W when b is [N,1,1,C].
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> concat_channels(const std::vector<Var<T>> &xs);
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> std::pair<Var<T>, Var<T>> split_channels_half(Var<T> x);

template <typename T>
Var<T> reflect_pad(Var<T> x, std::size_t pad_h, std::size_t pad_w);
template <typename T> Var<T> crop(Var<T> x, std::size_t h, std::size_t w);

// Reductions and losses (all return shape [1]).
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// sum(x * weights) for a constant weight tensor; used to probe gradients.
template <typename T> Var<T> weighted_sum(Var<T> x, const Tensor<T> &weights);
template <typename T> Var<T> l1_loss(Var<T> pred, Var<T> target);
/// mean(sqrt((pred-target)^2 + eps^2)).
template <typename T> Var<T> charbonnier_loss(Var<T> pred, Var<T> target, T eps);

} // namespace ddnt::ad
