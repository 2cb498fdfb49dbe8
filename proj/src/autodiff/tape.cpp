// SPDX-License-Identifier: Apache-2.0
#include "ddnt/autodiff.hpp"

#include <stdexcept>

namespace ddnt {

template <typename T>
Tensor<T> &ParamStore<T>::add(const std::string &name, Tensor<T> value,
                              bool requires_grad) {
  if (index_.count(name))
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(value), requires_grad});
  return entries_.back().value;
}

template <typename T>
bool ParamStore<T>::contains(const std::string &name) const {
  return index_.count(name) != 0;
}

template <typename T>
const typename ParamStore<T>::Entry &
ParamStore<T>::entry(const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T> Tensor<T> &ParamStore<T>::at(const std::string &name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
const Tensor<T> &ParamStore<T>::at(const std::string &name) const {
  return entry(name).value;
}

template <typename T> std::size_t ParamStore<T>::total_count() const {
  std::size_t n = 0;
  for (const auto &e : entries_)
    n += e.value.numel();
  return n;
}

template <typename T> Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back({std::move(value), {}, false, {}, {}});
  return {this, nodes_.size() - 1};
}

template <typename T> Var<T> Tape<T>::variable(Tensor<T> value) {
  nodes_.push_back({std::move(value), {}, grad_enabled_, {}, {}});
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(const ParamStore<T> &store, const std::string &name) {
  if (auto it = params_.find(name); it != params_.end())
    return {this, it->second};
  const auto &e = store.entry(name);
  nodes_.push_back({e.value, {}, grad_enabled_ && e.requires_grad, name, {}});
  params_.emplace(name, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                       BackwardFn fn) {
  bool rg = false;
  for (const auto &p : parents)
    rg = rg || (p.tape != nullptr && nodes_.at(p.id).requires_grad);
  nodes_.push_back(
      {std::move(value), {}, rg, {}, rg ? std::move(fn) : BackwardFn{}});
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>> &parents,
                       BackwardFn fn) {
  bool rg = false;
  for (const auto &p : parents)
    rg = rg || (p.tape != nullptr && nodes_.at(p.id).requires_grad);
  nodes_.push_back(
      {std::move(value), {}, rg, {}, rg ? std::move(fn) : BackwardFn{}});
  return {this, nodes_.size() - 1};
}

template <typename T> void Tape<T>::accumulate(Var<T> v, const Tensor<T> &g) {
  Node &n = nodes_.at(v.id);
  if (!n.requires_grad)
    return;
  require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i)
    n.grad[i] += g[i];
}

template <typename T> void Tape<T>::accumulate(Var<T> v, Tensor<T> &&g) {
  Node &n = nodes_.at(v.id);
  if (!n.requires_grad)
    return;
  require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
  if (n.grad.empty()) {
    n.grad = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i)
    n.grad[i] += g[i];
}

template <typename T> Gradients<T> Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this)
    throw std::invalid_argument("backward: loss belongs to another tape");
  Node &root = nodes_.at(loss.id);
  if (root.value.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(root.value.shape()));
  for (auto &n : nodes_)
    n.grad = Tensor<T>();
  if (root.requires_grad)
    root.grad = Tensor<T>(root.value.shape(), T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node &n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward)
      continue;
    // The closure may append to other nodes' grads only; n stays valid.
    n.backward(*this, n.grad);
  }
  Gradients<T> out;
  for (const auto &[name, id] : params_) {
    const Node &n = nodes_[id];
    if (!n.requires_grad)
      continue;
    out.emplace(name, n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad);
  }
  return out;
}

template <typename T> Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node &n = nodes_.at(v.id);
  return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

} // namespace ddnt
