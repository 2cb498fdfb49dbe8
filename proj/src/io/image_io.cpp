// SPDX-License-Identifier: Apache-2.0
#include "ddnt/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace ddnt {

namespace {

class HeaderReader {
public:
  explicit HeaderReader(const std::vector<std::uint8_t> &b) : b_(b) {}

  // Skips whitespace and '#' comments, then reads a decimal field.
  std::size_t number(const char *what) {
    skip_space();
    if (pos_ >= b_.size())
      throw ImageTruncatedError(std::string("image header ends before ") +
                                what);
    if (!std::isdigit(b_[pos_]))
      throw ImageFormatError(std::string("image header: expected ") + what);
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000'000)
        throw ImageFormatError(std::string("image header: ") + what +
                               " too large");
    }
    return v;
  }
  // Exactly one whitespace byte separates the header from the raster.
  void raster_separator() {
    if (pos_ >= b_.size())
      throw ImageTruncatedError("image header ends before the raster");
    if (!std::isspace(b_[pos_]))
      throw ImageFormatError("image header: missing separator before raster");
    ++pos_;
  }
  std::size_t pos() const { return pos_; }

private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_]))
        ++pos_;
      else if (b_[pos_] == '#')
        while (pos_ < b_.size() && b_[pos_] != '\n')
          ++pos_;
      else
        break;
    }
  }
  const std::vector<std::uint8_t> &b_;
  std::size_t pos_ = 2;
};

std::string lower_ext(const std::filesystem::path &p) {
  auto e = p.extension().string();
  for (auto &c : e)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

} // namespace

Tensor<float> decode_pnm(const std::vector<std::uint8_t> &bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    throw ImageFormatError("bad magic: expected P6 or P5");
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader r(bytes);
  const auto w = r.number("width");
  const auto h = r.number("height");
  const auto maxval = r.number("maxval");
  if (maxval != 255)
    throw ImageMaxvalError("unsupported maxval " + std::to_string(maxval) +
                           " (only 255)");
  if (w == 0 || h == 0)
    throw ImageFormatError("image has a zero dimension");
  r.raster_separator();
  const std::size_t need = w * h * channels;
  if (bytes.size() - r.pos() < need)
    throw ImageTruncatedError("raster truncated: need " + std::to_string(need) +
                              " bytes, have " +
                              std::to_string(bytes.size() - r.pos()));
  Tensor<float> img({h, w, 3});
  const auto *p = bytes.data() + r.pos();
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img[i * 3 + c] =
          static_cast<float>(p[i * channels + (channels == 3 ? c : 0)]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Tensor<float> &image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("encode_ppm expects [H,W,3], got " +
                     shape_str(image.shape()));
  const std::string header = "P6\n" + std::to_string(image.dim(1)) + " " +
                             std::to_string(image.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.numel());
  for (auto v : image.vec()) {
    const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0f)));
  }
  return out;
}

bool is_supported_image(const std::filesystem::path &path) {
  const auto e = lower_ext(path);
  return e == ".ppm" || e == ".pgm" || e == ".pnm";
}

Tensor<float> decode_image(const std::filesystem::path &path) {
  if (lower_ext(path) == ".png" && !kHasPng)
    throw ImageError("'" + path.string() +
                     "': PNG support is not built in; convert to PPM");
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw ImageError("cannot open image '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const ImageFormatError &e) {
    throw ImageFormatError(path.string() + ": " + e.what());
  } catch (const ImageMaxvalError &e) {
    throw ImageMaxvalError(path.string() + ": " + e.what());
  } catch (const ImageTruncatedError &e) {
    throw ImageTruncatedError(path.string() + ": " + e.what());
  }
}

void encode_image(const Tensor<float> &image,
                  const std::filesystem::path &path) {
  if (lower_ext(path) == ".png" && !kHasPng)
    throw ImageError("'" + path.string() +
                     "': PNG support is not built in; use .ppm");
  const auto bytes = encode_ppm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw ImageError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char *>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f)
    throw ImageError("failed writing '" + path.string() + "'");
}

} // namespace ddnt
