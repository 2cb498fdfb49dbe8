// SPDX-License-Identifier: Apache-2.0
/**
 * @file   autodiff.hpp
 * @brief  Tape-based eager reverse-mode differentiation.
 *
 * Every differentiable op evaluates its forward kernel immediately and
 * appends a node to the tape. Nodes are appended in evaluation order, so the
 * tape itself is a topological order of the DAG and backward() simply walks
 * it in reverse. Gradients from multiple consumers are summed.
 */
#pragma once

#include "ddnt/tensor.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ddnt {

/// Named learnable tensors of a model. Names are unique and insertion order
/// is preserved (it defines checkpoint order).
template <typename T> class ParamStore {
public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool requires_grad = true;
  };

  Tensor<T> &add(const std::string &name, Tensor<T> value,
                 bool requires_grad = true);
  bool contains(const std::string &name) const;
  Tensor<T> &at(const std::string &name);
  const Tensor<T> &at(const std::string &name) const;
  const Entry &entry(const std::string &name) const;

  std::vector<Entry> &entries() { return entries_; }
  const std::vector<Entry> &entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_count() const;

  template <typename U> ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto &e : entries_)
      out.add(e.name, e.value.template cast<U>(), e.requires_grad);
    return out;
  }

private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T> using Gradients = std::map<std::string, Tensor<T>>;

template <typename T> class Tape;

/// Handle to a tape node.
template <typename T> struct Var {
  Tape<T> *tape = nullptr;
  std::size_t id = 0;

  const Tensor<T> &value() const { return tape->value(*this); }
  const Shape &shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

template <typename T> class Tape {
public:
  /// Receives the node's accumulated output gradient and pushes
  /// contributions to its inputs via accumulate().
  using BackwardFn = std::function<void(Tape &, const Tensor<T> &)>;

  Tape() = default;
  /// With grad disabled every leaf is a constant, so no backward closures
  /// are kept (inference mode).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var<T> constant(Tensor<T> value);
  /// Unnamed leaf that requires grad (e.g. an input under gradient check).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter; its gradient is reported under `name`.
  /// Repeated calls with the same name return the same node.
  Var<T> param(const ParamStore<T> &store, const std::string &name);

  /// Appends an op result. The node requires grad iff any parent does; when
  /// none does the backward closure is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn fn);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>> &parents,
                BackwardFn fn);

  const Tensor<T> &value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Adds g into v's gradient buffer. No-op for nodes without grad.
  void accumulate(Var<T> v, const Tensor<T> &g);
  void accumulate(Var<T> v, Tensor<T> &&g);

  /// Reverse sweep from a scalar loss. Returns gradients of all
  /// grad-requiring parameter leaves touched by this tape.
  Gradients<T> backward(Var<T> loss);

  /// Gradient of any node after backward(); zeros if it received none.
  Tensor<T> grad(Var<T> v) const;

  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string name;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  std::unordered_map<std::string, std::size_t> params_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Tape<float>;
extern template class Tape<double>;

} // namespace ddnt
