// SPDX-License-Identifier: Apache-2.0
/**
 * @file   image_io.hpp
 * @brief  Binary PPM (P6) and PGM (P5) codec. Images are [H,W,3] float
 *         tensors in [0,1]; 8-bit value v maps to v/255.
 */
#pragma once

#include "ddnt/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace ddnt {

/// PNG is not compiled in; decode/encode of .png paths raise ImageError.
inline constexpr bool kHasPng = false;

class ImageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};
/// Not a P5/P6 file, or a malformed header.
class ImageFormatError : public ImageError {
public:
  using ImageError::ImageError;
};
class ImageMaxvalError : public ImageError {
public:
  using ImageError::ImageError;
};
class ImageTruncatedError : public ImageError {
public:
  using ImageError::ImageError;
};

/// P5 input is replicated to three channels.
Tensor<float> decode_pnm(const std::vector<std::uint8_t> &bytes);
/// Writes P6; values are clamped to [0,1] and rounded to the nearest level.
std::vector<std::uint8_t> encode_ppm(const Tensor<float> &image);

Tensor<float> decode_image(const std::filesystem::path &path);
void encode_image(const Tensor<float> &image, const std::filesystem::path &path);

/// True for extensions this build can read (.ppm, .pgm, .pnm).
bool is_supported_image(const std::filesystem::path &path);

} // namespace ddnt
