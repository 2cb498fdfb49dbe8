// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dina.hpp
 * @brief  Dilated neighborhood attention over 2-D token grids.
 *
 * Each query token attends to a k x k neighborhood drawn from its own
 * dilation class along each axis: positions congruent to it modulo the
 * dilation. The window is centered on the query where possible and shifted
 * inward at the borders, so every token always has exactly k*k neighbors.
 *
 * Logits are (q . k + B) / sqrt(head_dim), where B is a learned per-head
 * table of shape [heads, 2t-1, 2t-1] (t = table neighborhood size) indexed
 * by the neighbor offset counted in dilation steps.
 */
#pragma once

#include "ddnt/autodiff.hpp"
#include "ddnt/init.hpp"

#include <string>
#include <vector>

namespace ddnt {

struct AttnGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 7; // odd neighborhood size per axis
  std::size_t dilation = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 0;

  std::size_t channels() const { return heads * head_dim; }
  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

/// Indices of the k neighbors of token i on an axis of length n.
std::vector<std::size_t> neighbor_indices(std::size_t n, std::size_t i,
                                          std::size_t k, std::size_t dilation);

/// Projection weights and bias table of one attention layer. Projections are
/// 1x1 convolutions ([1,1,C,C] weights, [C] biases; biases may be empty).
template <typename T> struct DinaParams {
  Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
  Tensor<T> rel_bias; // [heads, 2t-1, 2t-1]

  static DinaParams from_store(const ParamStore<T> &store,
                               const std::string &prefix);
};

/// Registers `<prefix>.{q,k,v,out}_{w,b}` and `<prefix>.rel_bias`.
template <typename T>
void register_dina_params(ParamStore<T> &store, const std::string &prefix,
                          std::size_t channels, std::size_t heads,
                          std::size_t table_kernel, bool use_bias,
                          Initializer &init);

/// Attention core on already projected q, k, v ([N,H,W,C] each).
template <typename T>
Tensor<T> neighborhood_attention(const Tensor<T> &q, const Tensor<T> &k,
                                 const Tensor<T> &v, const Tensor<T> &rel_bias,
                                 const AttnGeometry &geom,
                                 std::vector<T> *probs = nullptr);

template <typename T> struct NeighborhoodAttentionGrads {
  Tensor<T> dq, dk, dv, drel_bias;
};

template <typename T>
NeighborhoodAttentionGrads<T> neighborhood_attention_backward(
    const Tensor<T> &q, const Tensor<T> &k, const Tensor<T> &v,
    const Tensor<T> &rel_bias, const AttnGeometry &geom,
    const std::vector<T> &probs, const Tensor<T> &dout);

namespace ad {
template <typename T>
Var<T> neighborhood_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> rel_bias,
                              const AttnGeometry &geom);

/// Full layer on a tape: projections, attention, output projection.
/// Parameters are read from `store` under `prefix`.
template <typename T>
Var<T> dina(Tape<T> &tape, const ParamStore<T> &store,
            const std::string &prefix, Var<T> x, const AttnGeometry &geom);
} // namespace ad

/// Inference-only forward of the full layer.
template <typename T>
Tensor<T> dina_forward(const Tensor<T> &x, const DinaParams<T> &p,
                       const AttnGeometry &geom);

/// Reference: materializes the dense attention matrix with -inf outside each
/// token's neighborhood. Shares no code with dina_forward.
template <typename T>
Tensor<T> dense_masked_attention_oracle(const Tensor<T> &x,
                                        const DinaParams<T> &p,
                                        const AttnGeometry &geom);

} // namespace ddnt
