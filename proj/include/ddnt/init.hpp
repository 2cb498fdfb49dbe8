// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ddnt/tensor.hpp"

#include <cstdint>
#include <random>

namespace ddnt {

/// Seeded parameter initializer. Weights draw from a normal truncated at two
/// standard deviations; biases and bias tables start at 0.
class Initializer {
public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T> Tensor<T> trunc_normal(Shape shape, double std = 0.02);
  /// Convolution weight whose last axis is the output channel ([K,K,Cin,Cout])
  /// or a depthwise kernel ([K,K,C], fan-in K*K). std = gain / sqrt(fan_in).
  template <typename T> Tensor<T> conv_weight(Shape shape, double gain = 1.0);
  template <typename T> Tensor<T> zeros(Shape shape) {
    return Tensor<T>(std::move(shape));
  }
  template <typename T> Tensor<T> ones(Shape shape) {
    return Tensor<T>(std::move(shape), T(1));
  }

  std::mt19937_64 &rng() { return rng_; }

private:
  std::mt19937_64 rng_;
};

} // namespace ddnt
