// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense row-major tensor used by every kernel in the library.
 *
 * Feature maps are NHWC. The scalar type is a template parameter; float is
 * the working precision and double exists for finite-difference checks.
 */
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddnt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

/// Thrown for any shape-contract violation; the message names the shapes.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

template <typename T> class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T> &vec() { return data_; }
  const std::vector<T> &vec() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  // NHWC accessors for rank-4 maps.
  T &at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }
  const T &at(std::size_t n, std::size_t h, std::size_t w,
              std::size_t c) const {
    return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(T v);
  bool all_finite() const;

  template <typename U> Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor &o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

private:
  Shape shape_;
  std::vector<T> data_;
};

/// Largest absolute elementwise difference; throws on shape mismatch.
template <typename T> T max_abs_diff(const Tensor<T> &a, const Tensor<T> &b);

void require_same_shape(const Shape &a, const Shape &b, const char *what);

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace ddnt
