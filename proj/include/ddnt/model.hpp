// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  The full encoder-decoder deblurring network, its configurations,
 *         parameter accounting and checkpoint format.
 *
 * Topology (Ci channels at level i, level i has 1/2^(i-1) resolution):
 *
 *   image -> stem 3x3 -> R residual blocks                    = e1
 *         -> stride-2 3x3 -> R residual blocks                = e2
 *         -> stride-2 3x3 -> R residual blocks                = e3
 *   f1 = fuse(e1, up2 e2, up4 e3)   f2 = fuse(down2 e1, e2, up2 e3)
 *   d3 = N3 blocks(e3)
 *   d2 = N2 blocks(fuse(upconv d3, f2))
 *   d1 = N1 blocks(fuse(upconv d2, f1))
 *   out = conv3x3(d1) + image
 *
 * Decoder blocks alternate local (dilation 1) and global
 * (dilation max(1, floor(min(h, w) / k))) attention, starting local.
 */
#pragma once

#include "ddnt/blocks.hpp"
#include "ddnt/fusion.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ddnt {

inline constexpr std::size_t kLevels = 3;
/// Input extents are padded up to a multiple of this (three 2x reductions).
inline constexpr std::size_t kSizeMultiple = 8;

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::array<std::size_t, kLevels> channels{64, 128, 256};
  std::array<std::size_t, kLevels> blocks{4, 6, 8};
  std::array<std::size_t, kLevels> heads{2, 4, 8};
  std::size_t residual_blocks = 2;
  std::size_t kernel_size = 7;
  double leaky_slope = 0.2;
  bool use_bias = true;
  CfmMode cfm_mode = CfmMode::project;
  FfnKind ffn = FfnKind::dmfn;

  /// "s", "l" or "tiny" (case-insensitive).
  static ModelConfig preset(std::string_view name);
  /// Throws ConfigError naming the violated field.
  void validate() const;
  /// Flat `key = value` lines; per-level values comma-separated.
  std::string to_text() const;
  /// Unknown keys, malformed values and invalid configs raise ConfigError.
  /// Keys not present keep their defaults (the S preset).
  static ModelConfig from_text(std::string_view text);

  bool operator==(const ModelConfig &) const = default;
};

template <typename T> struct BasicModel {
  ModelConfig config;
  ParamStore<T> params;

  template <typename U> BasicModel<U> cast() const {
    return {config, params.template cast<U>()};
  }
};
using Model = BasicModel<float>;

template <typename T>
void register_model_params(ParamStore<T> &store, const ModelConfig &cfg,
                           Initializer &init);

/// Validates cfg, then initializes all parameters deterministically.
Model build_model(const ModelConfig &cfg, std::uint64_t seed);

namespace ad {
/// Training forward: pads to a multiple of 8, runs the network, crops back.
/// No clamping.
template <typename T>
Var<T> model_forward(Tape<T> &tape, const ModelConfig &cfg,
                     const ParamStore<T> &params, Var<T> image);
template <typename T>
Var<T> model_forward(Tape<T> &tape, const BasicModel<T> &model, Var<T> image) {
  return model_forward(tape, model.config, model.params, image);
}
} // namespace ad

/// Inference forward on [N,H,W,3]; output clamped to [0,1] when requested.
template <typename T>
Tensor<T> forward(const BasicModel<T> &model, const Tensor<T> &image,
                  bool clamp_output = true);

struct LevelSchedule {
  std::size_t height = 0, width = 0; // grid seen by the level's blocks
  std::vector<AttnGeometry> blocks;  // one per decoder block, in order
};
/// Attention geometry of every decoder block for an input of h x w.
std::vector<LevelSchedule> dilation_schedule(const ModelConfig &cfg,
                                             std::size_t height,
                                             std::size_t width);

struct ParamCount {
  /// Module name (first component of the parameter name) and its count,
  /// in network order.
  std::vector<std::pair<std::string, std::size_t>> modules;
  std::size_t total = 0;
  /// All fusion modules together (two multi-scale, two same-scale).
  std::size_t fusion = 0;
};
template <typename T> ParamCount count_parameters(const BasicModel<T> &model);
/// Table for a configuration (builds its parameter set).
ParamCount count_parameters(const ModelConfig &cfg);

// ----------------------------------------------------------------- checkpoint

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};
/// Bad magic, unsupported version, malformed config text, trailing bytes.
class CheckpointFormatError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
public:
  using CheckpointError::CheckpointError;
};
/// A stored tensor disagrees with the configuration snapshot.
class CheckpointShapeError : public CheckpointError {
public:
  CheckpointShapeError(std::string param, const std::string &what)
      : CheckpointError(what), param_(std::move(param)) {}
  const std::string &param() const { return param_; }

private:
  std::string param_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model &model);
Model deserialize_checkpoint(const std::vector<std::uint8_t> &bytes);
void save_checkpoint(const Model &model, const std::filesystem::path &path);
/// Also throws CheckpointError if the file cannot be opened.
Model load_checkpoint(const std::filesystem::path &path);

} // namespace ddnt
