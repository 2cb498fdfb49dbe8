// SPDX-License-Identifier: Apache-2.0
#include "ddnt/init.hpp"

#include <cmath>

namespace ddnt {

template <typename T> Tensor<T> Initializer::trunc_normal(Shape shape, double std) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double z = dist(rng_);
    while (std::abs(z) > 2.0)
      z = dist(rng_);
    t[i] = static_cast<T>(z * std);
  }
  return t;
}

template <typename T> Tensor<T> Initializer::conv_weight(Shape shape, double gain) {
  if (shape.size() < 3)
    throw ShapeError("conv_weight: expected rank >= 3, got " + shape_str(shape));
  std::size_t fan_in = shape[0] * shape[1];
  if (shape.size() == 4)
    fan_in *= shape[2];
  return trunc_normal<T>(std::move(shape), gain / std::sqrt(static_cast<double>(fan_in)));
}

template Tensor<float> Initializer::conv_weight(Shape, double);
template Tensor<double> Initializer::conv_weight(Shape, double);
template Tensor<float> Initializer::trunc_normal(Shape, double);
template Tensor<double> Initializer::trunc_normal(Shape, double);

} // namespace ddnt
