// SPDX-License-Identifier: Apache-2.0
#include "ddnt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ddnt {

namespace {

template <typename T>
void require_images(const Tensor<T> &a, const Tensor<T> &b, const char *what) {
  require_same_shape(a.shape(), b.shape(), what);
  if (a.rank() != 3 || a.numel() == 0)
    throw ShapeError(std::string(what) + " expects non-empty [H,W,C], got " +
                     shape_str(a.shape()));
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1) / 2;
  double sum = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += g[i];
  }
  for (auto &v : g)
    v /= sum;
  return g;
}

} // namespace

template <typename T> double psnr(const Tensor<T> &a, const Tensor<T> &b) {
  require_images(a, b, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0)
    return kPsnrCap;
  return std::min(kPsnrCap, 10 * std::log10(1 / mse));
}

template <typename T> double ssim(const Tensor<T> &a, const Tensor<T> &b) {
  require_images(a, b, "ssim");
  const std::size_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
  std::size_t win = std::min<std::size_t>({11, H, W});
  if (win % 2 == 0)
    --win;
  const auto g1 = gaussian_window(win, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0;
    for (std::size_t y = 0; y + win <= H; ++y)
      for (std::size_t x = 0; x + win <= W; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < win; ++i)
          for (std::size_t j = 0; j < win; ++j) {
            const double w = g1[i] * g1[j];
            const double va = a[((y + i) * W + x + j) * C + c];
            const double vb = b[((y + i) * W + x + j) * C + c];
            ma += w * va;
            mb += w * vb;
            // Products grouped so swapping a and b, or a == b, gives
            // bitwise-identical terms.
            saa += w * (va * va);
            sbb += w * (vb * vb);
            sab += w * (va * vb);
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb,
                     cov = sab - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    total += acc / static_cast<double>((H - win + 1) * (W - win + 1));
  }
  return total / static_cast<double>(C);
}

double rgb_saturation(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  return mx <= 0 ? 0.0 : (mx - mn) / mx;
}

double rgb_hue(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d <= 0)
    return 0.0;
  double h;
  if (mx == r)
    h = 60 * std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = 60 * ((b - r) / d + 2);
  else
    h = 60 * ((r - g) / d + 4);
  if (h < 0)
    h += 360;
  return h >= 360 ? h - 360 : h;
}

template <typename T>
double hue_distance(const Tensor<T> &a, const Tensor<T> &b) {
  require_images(a, b, "hue_distance");
  if (a.dim(2) != 3)
    throw ShapeError("hue_distance needs 3 channels, got " +
                     shape_str(a.shape()));
  const std::size_t n = a.dim(0) * a.dim(1);
  double sum = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double ar = a[3 * p], ag = a[3 * p + 1], ab = a[3 * p + 2];
    const double br = b[3 * p], bg = b[3 * p + 1], bb = b[3 * p + 2];
    if (rgb_saturation(ar, ag, ab) == 0 && rgb_saturation(br, bg, bb) == 0)
      continue;
    const double d = std::abs(rgb_hue(ar, ag, ab) - rgb_hue(br, bg, bb));
    sum += std::min(d, 360 - d);
  }
  return sum / static_cast<double>(n) / 180.0 * 100.0;
}

ImageMetrics MetricReport::mean() const {
  if (images.empty())
    throw std::logic_error("metric report has no images");
  ImageMetrics m{"mean"};
  for (const auto &r : images) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.hue += r.hue;
  }
  const double n = static_cast<double>(images.size());
  m.psnr /= n;
  m.ssim /= n;
  m.hue /= n;
  return m;
}

std::string MetricReport::to_text() const {
  std::size_t idw = 4;
  for (const auto &r : images)
    idw = std::max(idw, r.id.size());
  std::ostringstream os;
  char buf[128];
  auto row = [&](const ImageMetrics &r) {
    std::snprintf(buf, sizeof buf, "  %10.4f  %8.6f  %8.4f\n", r.psnr, r.ssim,
                  r.hue);
    os << r.id << std::string(idw - r.id.size(), ' ') << buf;
  };
  std::snprintf(buf, sizeof buf, "  %10s  %8s  %8s\n", "psnr_db", "ssim",
                "hue_pct");
  os << "id" << std::string(idw - 2, ' ') << buf;
  for (const auto &r : images)
    row(r);
  if (!images.empty())
    row(mean());
  return os.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "id,psnr,ssim,hue\n";
  auto row = [&](const ImageMetrics &r) {
    os << r.id << "," << r.psnr << "," << r.ssim << "," << r.hue << "\n";
  };
  for (const auto &r : images)
    row(r);
  if (!images.empty())
    row(mean());
  return os.str();
}

template double psnr(const Tensor<float> &, const Tensor<float> &);
template double psnr(const Tensor<double> &, const Tensor<double> &);
template double ssim(const Tensor<float> &, const Tensor<float> &);
template double ssim(const Tensor<double> &, const Tensor<double> &);
template double hue_distance(const Tensor<float> &, const Tensor<float> &);
template double hue_distance(const Tensor<double> &, const Tensor<double> &);

} // namespace ddnt
