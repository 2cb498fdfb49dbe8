// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data.hpp
 * @brief  Synthetic blurred/sharp pairs, blur kernels, and directory-based
 *         pair datasets (`<dir>/blur/NAME` matched with `<dir>/sharp/NAME`).
 */
#pragma once

#include "ddnt/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ddnt {

class DatasetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct BlurSpec {
  enum class Kind { gaussian, motion };
  Kind kind = Kind::gaussian;
  double sigma = 2.0;     // gaussian
  double length = 9.0;    // motion, pixels
  double angle_deg = 0.0; // motion, counter-clockwise from +x

  static BlurSpec gaussian(double sigma) { return {Kind::gaussian, sigma}; }
  static BlurSpec motion(double length, double angle_deg) {
    return {Kind::motion, 0.0, length, angle_deg};
  }
};

/// Square odd-sized kernel [K,K] summing to 1. A Gaussian with sigma below
/// 1e-3 is the 1x1 delta.
Tensor<float> blur_kernel(const BlurSpec &spec);

/// Correlates each channel of [H,W,C] with a [K,K] kernel using mirror
/// padding that repeats the edge sample (`cba|abc|cba`). With a kernel that
/// is symmetric in both axes this keeps the image mean exactly.
Tensor<float> convolve_reflect(const Tensor<float> &image,
                               const Tensor<float> &kernel);

/// Seeded sharp test image [H,W,3] in [0,1]: a linear color gradient with
/// blended rectangles and one-pixel strokes on top.
Tensor<float> procedural_image(std::uint64_t seed, std::size_t height,
                               std::size_t width);

struct PairSample {
  Tensor<float> blurred; // [H,W,3]
  Tensor<float> sharp;   // [H,W,3]
  std::string id;
};

PairSample synth_pair(std::uint64_t seed, std::size_t size,
                      const BlurSpec &blur);

struct PairDataset {
  std::vector<PairSample> pairs; // sorted by id

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }
};

/// Reads matching files from `<dir>/blur` and `<dir>/sharp`. Missing
/// counterparts raise DatasetError listing every orphan; differing image
/// sizes within a pair raise DatasetError naming the file.
PairDataset load_pairs(const std::filesystem::path &dir);

/// Same random window from both images, mirrored horizontally with
/// probability 1/2 when `flip` is set. Returns {blurred, sharp}.
std::pair<Tensor<float>, Tensor<float>>
random_crop_pair(const PairSample &sample, std::size_t patch,
                 std::mt19937_64 &rng, bool flip = true);

/// Stacks equally shaped [H,W,C] images into [N,H,W,C].
Tensor<float> stack_images(const std::vector<Tensor<float>> &images);
/// Image n of an [N,H,W,C] batch.
Tensor<float> unstack_image(const Tensor<float> &batch, std::size_t n);

} // namespace ddnt
