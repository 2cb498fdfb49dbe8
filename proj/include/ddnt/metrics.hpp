// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  PSNR, SSIM and HSV hue distance between images in [0,1].
 *
 * Images are [H,W,C] tensors. Accumulation is in double.
 */
#pragma once

#include "ddnt/tensor.hpp"

#include <string>
#include <vector>

namespace ddnt {

/// Reported in place of +inf for identical images.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE), capped at kPsnrCap.
template <typename T> double psnr(const Tensor<T> &a, const Tensor<T> &b);

/// Single-scale SSIM: Gaussian window 11x11, sigma 1.5, K1 0.01, K2 0.03,
/// range 1, valid window positions only, averaged over channels. Images
/// smaller than the window use the largest odd window that fits.
template <typename T> double ssim(const Tensor<T> &a, const Tensor<T> &b);

/// Hue in degrees [0,360) of one RGB triple; 0 when saturation is 0.
double rgb_hue(double r, double g, double b);
/// HSV saturation in [0,1].
double rgb_saturation(double r, double g, double b);

/// Mean circular hue difference as a percent of 180 degrees. Pixels where
/// both saturations are 0 contribute 0; if only one is 0 its hue is 0.
template <typename T>
double hue_distance(const Tensor<T> &a, const Tensor<T> &b);

struct ImageMetrics {
  std::string id;
  double psnr = 0, ssim = 0, hue = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> images;

  std::size_t count() const { return images.size(); }
  /// Arithmetic means in index order. Throws if the report is empty.
  ImageMetrics mean() const;
  /// Aligned columns with a trailing mean row.
  std::string to_text() const;
  /// Header `id,psnr,ssim,hue` then one row per image and a `mean` row.
  std::string to_csv() const;
};

} // namespace ddnt
