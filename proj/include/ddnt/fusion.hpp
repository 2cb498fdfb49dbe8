// SPDX-License-Identifier: Apache-2.0
/**
 * @file   fusion.hpp
 * @brief  Two-stage feature fusion: channel reduction (1x1 then depthwise
 *         3x3) followed by complementary feature mixing.
 *
 * Mixing normalizes its input, forms two branches (one GELU-gated),
 * multiplies them, merges with a 1x1 and a depthwise 3x3 convolution and
 * adds the result to its input. In `project` mode both branches are 1x1
 * projections of the whole input; in `split` mode each branch projects one
 * half of the channels.
 */
#pragma once

#include "ddnt/ad_ops.hpp"
#include "ddnt/init.hpp"

#include <string>

namespace ddnt {

enum class CfmMode { project, split };

/// Registers `<prefix>.ecr.*` and `<prefix>.cfm.*`.
template <typename T>
void register_ldff(ParamStore<T> &store, const std::string &prefix,
                   std::size_t in_channels, std::size_t out_channels,
                   CfmMode mode, bool use_bias, Initializer &init);

namespace ad {

template <typename T>
Var<T> ecr(Tape<T> &tape, const ParamStore<T> &store, const std::string &prefix,
           Var<T> x_cat);
template <typename T>
Var<T> cfm(Tape<T> &tape, const ParamStore<T> &store, const std::string &prefix,
           Var<T> x, CfmMode mode);
/// Fuses three encoder levels at the resolution of `target_level` (1 or 2).
/// Level sizes must be in ratio 1 : 1/2 : 1/4.
template <typename T>
Var<T> ldff_multiscale(Tape<T> &tape, const ParamStore<T> &store,
                       const std::string &prefix, Var<T> e1, Var<T> e2,
                       Var<T> e3, int target_level, CfmMode mode);
template <typename T>
Var<T> ldff_samescale(Tape<T> &tape, const ParamStore<T> &store,
                      const std::string &prefix, Var<T> a, Var<T> b,
                      CfmMode mode);

} // namespace ad

template <typename T>
Tensor<T> ecr_forward(const Tensor<T> &x_cat, const ParamStore<T> &store,
                      const std::string &prefix);
template <typename T>
Tensor<T> cfm_forward(const Tensor<T> &x, const ParamStore<T> &store,
                      const std::string &prefix, CfmMode mode);
template <typename T>
Tensor<T> ldff_multiscale_forward(const Tensor<T> &e1, const Tensor<T> &e2,
                                  const Tensor<T> &e3, int target_level,
                                  const ParamStore<T> &store,
                                  const std::string &prefix, CfmMode mode);
template <typename T>
Tensor<T> ldff_samescale_forward(const Tensor<T> &a, const Tensor<T> &b,
                                 const ParamStore<T> &store,
                                 const std::string &prefix, CfmMode mode);

} // namespace ddnt
