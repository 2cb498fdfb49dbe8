// SPDX-License-Identifier: Apache-2.0
#include "ddnt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ddnt {

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Shape &a, const Shape &b, const char *what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

static void check_extents(const Shape &shape) {
  for (auto d : shape)
    if (d == 0)
      throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

template <typename T> Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                     shape_str(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T> void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T> bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T> T max_abs_diff(const Tensor<T> &a, const Tensor<T> &b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float> &, const Tensor<float> &);
template double max_abs_diff(const Tensor<double> &, const Tensor<double> &);

} // namespace ddnt
