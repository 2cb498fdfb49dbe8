// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ddnt/autodiff.hpp"
#include "ddnt/tensor.hpp"

#include <cstdint>
#include <random>

namespace ddnt::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64 &rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(u(rng));
  return t;
}

inline std::size_t rand_between(std::mt19937_64 &rng, std::size_t lo,
                                std::size_t hi) {
  return lo + rng() % (hi - lo + 1);
}

/// Overwrites every parameter with uniform noise so zero-initialized
/// biases and tables are exercised too.
template <typename T>
void randomize(ParamStore<T> &store, std::mt19937_64 &rng, double lo = -0.5,
               double hi = 0.5) {
  for (auto &e : store.entries())
    e.value = random_tensor<T>(e.value.shape(), rng, lo, hi);
}

template <typename T> void zero_all(ParamStore<T> &store) {
  for (auto &e : store.entries())
    e.value.fill(T(0));
}

} // namespace ddnt::testing
