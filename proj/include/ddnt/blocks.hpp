// SPDX-License-Identifier: Apache-2.0
/**
 * @file   blocks.hpp
 * @brief  Transformer block internals (channel gate, attention with channel
 *         modulation, gated feed-forward) and the convolutional residual
 *         block of the encoder.
 *
 * Parameters live in a ParamStore under a caller-chosen prefix. Every block
 * has a tape form (namespace ad) used for training and gradient checks, and
 * a Tensor form that runs the same code on a grad-free tape.
 */
#pragma once

#include "ddnt/ad_ops.hpp"
#include "ddnt/dina.hpp"
#include "ddnt/init.hpp"

#include <string>

namespace ddnt {

enum class FfnKind { dmfn, gdfn };
enum class DilationTag { local, global };

inline constexpr std::size_t kLcclWidth = 3;
inline constexpr std::size_t kFfnExpansion = 2;
inline constexpr double kLayerNormEps = 1e-5;

struct BlockOptions {
  bool use_bias = true;
  FfnKind ffn = FfnKind::dmfn;
  /// gdfn only: replace the GELU on the gate branch by the identity.
  bool identity_gate = false;
};

/// max(1, floor(min(h, w) / k)).
std::size_t global_dilation(std::size_t height, std::size_t width,
                            std::size_t kernel);

/// Attention geometry for one block. When the grid is smaller than the
/// configured neighborhood, the neighborhood shrinks to the largest odd size
/// that fits.
AttnGeometry block_geometry(std::size_t height, std::size_t width,
                            std::size_t channels, std::size_t heads,
                            std::size_t kernel, DilationTag tag);

template <typename T>
void register_layer_norm(ParamStore<T> &store, const std::string &prefix,
                         std::size_t channels);
/// `<prefix>.pw_{w,b}` (C -> 2C) and `<prefix>.dw_{w,b}` (3x3 over 2C).
template <typename T>
void register_ffn(ParamStore<T> &store, const std::string &prefix,
                  std::size_t channels, bool use_bias, Initializer &init);
template <typename T>
void register_transformer_block(ParamStore<T> &store, const std::string &prefix,
                                std::size_t channels, std::size_t heads,
                                std::size_t kernel, bool use_bias,
                                Initializer &init);
template <typename T>
void register_residual_block(ParamStore<T> &store, const std::string &prefix,
                             std::size_t channels, Initializer &init);

namespace ad {

template <typename T>
Var<T> layer_norm(Tape<T> &tape, const ParamStore<T> &store,
                  const std::string &prefix, Var<T> x);
/// sigmoid(conv1d(GAP(x))) with shape [N,1,1,C].
template <typename T> Var<T> lccl(Var<T> x_norm, Var<T> w);
template <typename T>
Var<T> casa(Tape<T> &tape, const ParamStore<T> &store,
            const std::string &prefix, Var<T> x_norm, const AttnGeometry &geom);
template <typename T>
Var<T> ffn(Tape<T> &tape, const ParamStore<T> &store,
           const std::string &prefix, Var<T> x_norm, const BlockOptions &opt);
template <typename T>
Var<T> transformer_block(Tape<T> &tape, const ParamStore<T> &store,
                         const std::string &prefix, Var<T> x,
                         const AttnGeometry &geom, const BlockOptions &opt);
template <typename T>
Var<T> residual_block(Tape<T> &tape, const ParamStore<T> &store,
                      const std::string &prefix, Var<T> x, T slope);

} // namespace ad

template <typename T>
Tensor<T> lccl_forward(const Tensor<T> &x_norm, const Tensor<T> &w);
template <typename T>
Tensor<T> casa_forward(const Tensor<T> &x_norm, const ParamStore<T> &store,
                       const std::string &prefix, const AttnGeometry &geom);
template <typename T>
Tensor<T> dmfn_forward(const Tensor<T> &x_norm, const ParamStore<T> &store,
                       const std::string &prefix);
template <typename T>
Tensor<T> gdfn_forward(const Tensor<T> &x_norm, const ParamStore<T> &store,
                       const std::string &prefix, bool identity_gate = false);
template <typename T>
Tensor<T> transformer_block_forward(const Tensor<T> &x,
                                    const ParamStore<T> &store,
                                    const std::string &prefix,
                                    const AttnGeometry &geom,
                                    const BlockOptions &opt = {});
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T> &x, const ParamStore<T> &store,
                                 const std::string &prefix, T slope);

} // namespace ddnt
