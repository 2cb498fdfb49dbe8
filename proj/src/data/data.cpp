// SPDX-License-Identifier: Apache-2.0
#include "ddnt/data.hpp"

#include "ddnt/image_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <numbers>

namespace ddnt {

namespace {

// Mirror with the edge sample repeated; period 2n.
std::size_t mirror_index(long i, long n) {
  const long p = 2 * n;
  long m = i % p;
  if (m < 0)
    m += p;
  return static_cast<std::size_t>(m < n ? m : p - 1 - m);
}

void normalize(Tensor<float> &k) {
  double s = 0;
  for (auto v : k.vec())
    s += v;
  for (auto &v : k.vec())
    v = static_cast<float>(v / s);
}

Tensor<float> gaussian_kernel(double sigma) {
  if (!(sigma >= 0))
    throw std::invalid_argument("gaussian blur: sigma must be >= 0");
  if (sigma < 1e-3)
    return Tensor<float>({1, 1}, 1.0f);
  const auto r = static_cast<long>(std::ceil(3 * sigma));
  const auto k = static_cast<std::size_t>(2 * r + 1);
  Tensor<float> out({k, k});
  for (long y = -r; y <= r; ++y)
    for (long x = -r; x <= r; ++x)
      out[static_cast<std::size_t>((y + r) * static_cast<long>(k) + x + r)] =
          static_cast<float>(std::exp(-(x * x + y * y) / (2 * sigma * sigma)));
  normalize(out);
  return out;
}

// A segment of the given length through the kernel center, splatted
// bilinearly from dense samples.
Tensor<float> motion_kernel(double length, double angle_deg) {
  if (!(length >= 1))
    throw std::invalid_argument("motion blur: length must be >= 1");
  const auto r = static_cast<long>(std::ceil(length / 2));
  const auto k = static_cast<std::size_t>(2 * r + 1);
  Tensor<float> out({k, k});
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(a), dy = -std::sin(a);
  const auto samples = static_cast<long>(std::ceil(length * 8)) + 1;
  const double c = static_cast<double>(r);
  for (long s = 0; s < samples; ++s) {
    const double t = (static_cast<double>(s) / (samples - 1) - 0.5) * (length - 1);
    const double x = c + t * dx, y = c + t * dy;
    const double x0 = std::floor(x), y0 = std::floor(y);
    const double fx = x - x0, fy = y - y0;
    const auto put = [&](double yy, double xx, double w) {
      if (w <= 0 || yy < 0 || xx < 0 || yy >= static_cast<double>(k) ||
          xx >= static_cast<double>(k))
        return;
      out[static_cast<std::size_t>(yy) * k + static_cast<std::size_t>(xx)] +=
          static_cast<float>(w);
    };
    put(y0, x0, (1 - fy) * (1 - fx));
    put(y0, x0 + 1, (1 - fy) * fx);
    put(y0 + 1, x0, fy * (1 - fx));
    put(y0 + 1, x0 + 1, fy * fx);
  }
  normalize(out);
  return out;
}

} // namespace

Tensor<float> blur_kernel(const BlurSpec &spec) {
  return spec.kind == BlurSpec::Kind::gaussian
             ? gaussian_kernel(spec.sigma)
             : motion_kernel(spec.length, spec.angle_deg);
}

Tensor<float> convolve_reflect(const Tensor<float> &image,
                               const Tensor<float> &kernel) {
  if (image.rank() != 3)
    throw ShapeError("convolve_reflect: image must be [H,W,C], got " +
                     shape_str(image.shape()));
  if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) ||
      kernel.dim(0) % 2 == 0)
    throw ShapeError("convolve_reflect: kernel must be odd square [K,K], got " +
                     shape_str(kernel.shape()));
  const auto h = static_cast<long>(image.dim(0));
  const auto w = static_cast<long>(image.dim(1));
  const auto c = image.dim(2);
  const auto k = static_cast<long>(kernel.dim(0));
  const long r = k / 2;
  Tensor<float> out(image.shape());
  std::vector<double> acc(c);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (long i = 0; i < k; ++i) {
        const auto sy = mirror_index(y + i - r, h);
        for (long j = 0; j < k; ++j) {
          const double kv = kernel[static_cast<std::size_t>(i * k + j)];
          const auto sx = mirror_index(x + j - r, w);
          const float *src = image.data() + (sy * image.dim(1) + sx) * c;
          for (std::size_t ch = 0; ch < c; ++ch)
            acc[ch] += kv * src[ch];
        }
      }
      float *dst = out.data() + (static_cast<std::size_t>(y * w + x)) * c;
      for (std::size_t ch = 0; ch < c; ++ch)
        dst[ch] = static_cast<float>(acc[ch]);
    }
  return out;
}

Tensor<float> procedural_image(std::uint64_t seed, std::size_t height,
                               std::size_t width) {
  if (height == 0 || width == 0)
    throw std::invalid_argument("procedural_image: empty size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto color = [&] {
    return std::array<double, 3>{u01(rng), u01(rng), u01(rng)};
  };
  const auto H = static_cast<double>(height), W = static_cast<double>(width);
  Tensor<float> img({height, width, 3});
  auto px = [&](std::size_t y, std::size_t x) { return &img[(y * width + x) * 3]; };

  const auto c0 = color(), c1 = color();
  const double phi = u01(rng) * 2 * std::numbers::pi;
  const double gx = std::cos(phi), gy = std::sin(phi);
  const double lo = std::min(0.0, gx * (W - 1)) + std::min(0.0, gy * (H - 1));
  const double hi = std::max(0.0, gx * (W - 1)) + std::max(0.0, gy * (H - 1));
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double t = hi > lo ? (gx * x + gy * y - lo) / (hi - lo) : 0.0;
      for (int ch = 0; ch < 3; ++ch)
        px(y, x)[ch] = static_cast<float>(c0[ch] + (c1[ch] - c0[ch]) * t);
    }

  const auto rects = 3 + static_cast<int>(rng() % 6);
  for (int r = 0; r < rects; ++r) {
    const auto rh = std::max<std::size_t>(1, static_cast<std::size_t>(H * (0.1 + 0.4 * u01(rng))));
    const auto rw = std::max<std::size_t>(1, static_cast<std::size_t>(W * (0.1 + 0.4 * u01(rng))));
    const auto y0 = static_cast<std::size_t>(u01(rng) * static_cast<double>(height - std::min(rh, height) + 1));
    const auto x0 = static_cast<std::size_t>(u01(rng) * static_cast<double>(width - std::min(rw, width) + 1));
    const auto col = color();
    const double alpha = 0.5 + 0.5 * u01(rng);
    for (std::size_t y = y0; y < std::min(height, y0 + rh); ++y)
      for (std::size_t x = x0; x < std::min(width, x0 + rw); ++x)
        for (int ch = 0; ch < 3; ++ch) {
          auto &v = px(y, x)[ch];
          v = static_cast<float>((1 - alpha) * v + alpha * col[ch]);
        }
  }

  const auto strokes = 2 + static_cast<int>(rng() % 5);
  for (int s = 0; s < strokes; ++s) {
    const double ya = u01(rng) * (H - 1), xa = u01(rng) * (W - 1);
    const double yb = u01(rng) * (H - 1), xb = u01(rng) * (W - 1);
    const auto col = color();
    const auto n = static_cast<int>(std::max(std::abs(yb - ya), std::abs(xb - xa))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      const auto y = static_cast<std::size_t>(std::lround(ya + (yb - ya) * t));
      const auto x = static_cast<std::size_t>(std::lround(xa + (xb - xa) * t));
      for (int ch = 0; ch < 3; ++ch)
        px(y, x)[ch] = static_cast<float>(col[ch]);
    }
  }
  return img;
}

PairSample synth_pair(std::uint64_t seed, std::size_t size,
                      const BlurSpec &blur) {
  PairSample s;
  s.sharp = procedural_image(seed, size, size);
  s.blurred = convolve_reflect(s.sharp, blur_kernel(blur));
  for (auto &v : s.blurred.vec())
    v = std::clamp(v, 0.0f, 1.0f);
  s.id = "synth_" + std::to_string(seed);
  return s;
}

PairDataset load_pairs(const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw DatasetError("dataset directory '" + dir.string() + "' does not exist");
  const auto list = [&](const char *sub) {
    std::map<std::string, fs::path> files;
    const auto d = dir / sub;
    if (!fs::is_directory(d))
      return files;
    for (const auto &e : fs::directory_iterator(d)) {
      if (!e.is_regular_file())
        continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm" || ext == ".png")
        files.emplace(e.path().filename().string(), e.path());
    }
    return files;
  };
  const auto blur = list("blur");
  const auto sharp = list("sharp");

  std::vector<std::string> orphans;
  for (const auto &[name, p] : blur)
    if (!sharp.contains(name))
      orphans.push_back("blur/" + name + " (no sharp/" + name + ")");
  for (const auto &[name, p] : sharp)
    if (!blur.contains(name))
      orphans.push_back("sharp/" + name + " (no blur/" + name + ")");
  if (!orphans.empty()) {
    std::string msg = "unpaired dataset files in '" + dir.string() + "':";
    for (const auto &o : orphans)
      msg += "\n  " + o;
    throw DatasetError(msg);
  }

  PairDataset ds;
  for (const auto &[name, p] : blur) {
    PairSample s;
    s.id = name;
    s.blurred = decode_image(p);
    s.sharp = decode_image(sharp.at(name));
    if (s.blurred.shape() != s.sharp.shape())
      throw DatasetError("size mismatch for '" + name + "': blur " +
                         shape_str(s.blurred.shape()) + ", sharp " +
                         shape_str(s.sharp.shape()));
    ds.pairs.push_back(std::move(s));
  }
  return ds;
}

std::pair<Tensor<float>, Tensor<float>>
random_crop_pair(const PairSample &sample, std::size_t patch,
                 std::mt19937_64 &rng, bool flip) {
  const auto h = sample.sharp.dim(0), w = sample.sharp.dim(1);
  const auto c = sample.sharp.dim(2);
  if (patch == 0 || patch > h || patch > w)
    throw DatasetError("patch " + std::to_string(patch) +
                       " does not fit image '" + sample.id + "' of " +
                       std::to_string(h) + "x" + std::to_string(w));
  const auto y0 = std::uniform_int_distribution<std::size_t>(0, h - patch)(rng);
  const auto x0 = std::uniform_int_distribution<std::size_t>(0, w - patch)(rng);
  const bool mirror = flip && (rng() & 1u);
  const auto crop = [&](const Tensor<float> &img) {
    Tensor<float> out({patch, patch, c});
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x) {
        const auto sx = x0 + (mirror ? patch - 1 - x : x);
        std::copy_n(&img[((y0 + y) * w + sx) * c], c, &out[(y * patch + x) * c]);
      }
    return out;
  };
  return {crop(sample.blurred), crop(sample.sharp)};
}

Tensor<float> stack_images(const std::vector<Tensor<float>> &images) {
  if (images.empty())
    throw ShapeError("stack_images: no images");
  const auto &s = images.front().shape();
  if (s.size() != 3)
    throw ShapeError("stack_images: images must be [H,W,C], got " + shape_str(s));
  Shape out_shape{images.size(), s[0], s[1], s[2]};
  Tensor<float> out(out_shape);
  const auto n = shape_numel(s);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(s, images[i].shape(), "stack_images");
    std::copy_n(images[i].data(), n, out.data() + i * n);
  }
  return out;
}

Tensor<float> unstack_image(const Tensor<float> &batch, std::size_t n) {
  if (batch.rank() != 4 || n >= batch.dim(0))
    throw ShapeError("unstack_image: index " + std::to_string(n) +
                     " out of range for " + shape_str(batch.shape()));
  Tensor<float> out({batch.dim(1), batch.dim(2), batch.dim(3)});
  std::copy_n(batch.data() + n * out.numel(), out.numel(), out.data());
  return out;
}

} // namespace ddnt
