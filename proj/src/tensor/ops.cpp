// SPDX-License-Identifier: Apache-2.0
#include "ddnt/ops.hpp"

#include "ddnt/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ddnt::ops {

namespace {

void require_rank(const Shape &s, std::size_t r, const char *what) {
  if (s.size() != r)
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(r) + " tensor, got " + shape_str(s));
}

std::size_t pad_for(std::size_t k, Padding pad) {
  if (pad == Padding::valid)
    return 0;
  if (k % 2 == 0)
    throw ShapeError("same padding requires an odd kernel, got " +
                     std::to_string(k));
  return (k - 1) / 2;
}

struct ConvGeom {
  std::size_t n, h, w, cin, kh, kw, cout, oh, ow, stride, ph, pw;
};

template <typename T>
ConvGeom conv_geom(const Tensor<T> &x, const Tensor<T> &w, std::size_t stride,
                   Padding pad, bool depthwise) {
  const char *what = depthwise ? "depthwise_conv2d" : "conv2d";
  require_rank(x.shape(), 4, what);
  require_rank(w.shape(), depthwise ? 3 : 4, what);
  if (stride < 1)
    throw ShapeError(std::string(what) + ": stride must be >= 1");
  ConvGeom g{};
  g.n = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cin = x.dim(3);
  g.kh = w.dim(0);
  g.kw = w.dim(1);
  const std::size_t wcin = w.dim(2);
  g.cout = depthwise ? wcin : w.dim(3);
  if (wcin != g.cin)
    throw ShapeError(std::string(what) + ": input " + shape_str(x.shape()) +
                     " does not match weights " + shape_str(w.shape()));
  g.stride = stride;
  g.ph = pad_for(g.kh, pad);
  g.pw = pad_for(g.kw, pad);
  if (pad == Padding::valid && (g.h < g.kh || g.w < g.kw))
    throw ShapeError(std::string(what) + ": input " + shape_str(x.shape()) +
                     " smaller than kernel " + shape_str(w.shape()));
  g.oh = conv_out_extent(g.h, g.kh, stride, pad);
  g.ow = conv_out_extent(g.w, g.kw, stride, pad);
  return g;
}

template <typename T>
void check_bias(const Tensor<T> &b, std::size_t cout, const char *what) {
  if (!b.empty() && (b.rank() != 1 || b.dim(0) != cout))
    throw ShapeError(std::string(what) + ": bias " + shape_str(b.shape()) +
                     " does not match " + std::to_string(cout) +
                     " output channels");
}

// Input coordinate for output position o and tap t, or -1 when padded.
inline long tap(std::size_t o, std::size_t t, std::size_t stride,
                std::size_t pad, std::size_t extent) {
  const long i = static_cast<long>(o * stride + t) - static_cast<long>(pad);
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

} // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                            Padding pad) {
  if (pad == Padding::same)
    return (in + stride - 1) / stride;
  return (in - k) / stride + 1;
}

// ---------------------------------------------------------------- conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &w, const Tensor<T> &b,
                 std::size_t stride, Padding pad) {
  const auto g = conv_geom(x, w, stride, pad, false);
  check_bias(b, g.cout, "conv2d");
  Tensor<T> y({g.n, g.oh, g.ow, g.cout});
  const T *xd = x.data();
  const T *wd = w.data();
  T *yd = y.data();
  parallel_for(0, g.n * g.oh, [&](std::size_t row) {
    const std::size_t n = row / g.oh, oy = row % g.oh;
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      T *acc = yd + ((n * g.oh + oy) * g.ow + ox) * g.cout;
      for (std::size_t co = 0; co < g.cout; ++co)
        acc[co] = b.empty() ? T(0) : b[co];
      for (std::size_t a = 0; a < g.kh; ++a) {
        const long iy = tap(oy, a, g.stride, g.ph, g.h);
        if (iy < 0)
          continue;
        for (std::size_t bb = 0; bb < g.kw; ++bb) {
          const long ix = tap(ox, bb, g.stride, g.pw, g.w);
          if (ix < 0)
            continue;
          const T *xp = xd + ((n * g.h + iy) * g.w + ix) * g.cin;
          const T *wp = wd + (a * g.kw + bb) * g.cin * g.cout;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const T xv = xp[ci];
            const T *wr = wp + ci * g.cout;
            for (std::size_t co = 0; co < g.cout; ++co)
              acc[co] += xv * wr[co];
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T> &x, const Tensor<T> &w,
                             bool has_bias, const Tensor<T> &dy,
                             std::size_t stride, Padding pad) {
  const auto g = conv_geom(x, w, stride, pad, false);
  require_same_shape(dy.shape(), {g.n, g.oh, g.ow, g.cout}, "conv2d_backward");
  ConvGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(w.shape()),
                 has_bias ? Tensor<T>({g.cout}) : Tensor<T>()};
  const T *xd = x.data();
  const T *wd = w.data();
  T *dxd = r.dx.data();
  T *dwd = r.dw.data();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T *gy = dy.data() + ((n * g.oh + oy) * g.ow + ox) * g.cout;
        if (has_bias)
          for (std::size_t co = 0; co < g.cout; ++co)
            r.db[co] += gy[co];
        for (std::size_t a = 0; a < g.kh; ++a) {
          const long iy = tap(oy, a, g.stride, g.ph, g.h);
          if (iy < 0)
            continue;
          for (std::size_t bb = 0; bb < g.kw; ++bb) {
            const long ix = tap(ox, bb, g.stride, g.pw, g.w);
            if (ix < 0)
              continue;
            const std::size_t xo = ((n * g.h + iy) * g.w + ix) * g.cin;
            const std::size_t wo = (a * g.kw + bb) * g.cin * g.cout;
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              const T xv = xd[xo + ci];
              const T *wr = wd + wo + ci * g.cout;
              T *dwr = dwd + wo + ci * g.cout;
              T s = 0;
              for (std::size_t co = 0; co < g.cout; ++co) {
                s += gy[co] * wr[co];
                dwr[co] += xv * gy[co];
              }
              dxd[xo + ci] += s;
            }
          }
        }
      }
  return r;
}

// ------------------------------------------------------------- depthwise

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T> &x, const Tensor<T> &w,
                           const Tensor<T> &b, std::size_t stride,
                           Padding pad) {
  const auto g = conv_geom(x, w, stride, pad, true);
  check_bias(b, g.cout, "depthwise_conv2d");
  Tensor<T> y({g.n, g.oh, g.ow, g.cin});
  const std::size_t c_count = g.cin;
  parallel_for(0, g.n * g.oh, [&](std::size_t row) {
    const std::size_t n = row / g.oh, oy = row % g.oh;
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      T *acc = y.data() + ((n * g.oh + oy) * g.ow + ox) * c_count;
      for (std::size_t c = 0; c < c_count; ++c)
        acc[c] = b.empty() ? T(0) : b[c];
      for (std::size_t a = 0; a < g.kh; ++a) {
        const long iy = tap(oy, a, g.stride, g.ph, g.h);
        if (iy < 0)
          continue;
        for (std::size_t bb = 0; bb < g.kw; ++bb) {
          const long ix = tap(ox, bb, g.stride, g.pw, g.w);
          if (ix < 0)
            continue;
          const T *xp = x.data() + ((n * g.h + iy) * g.w + ix) * c_count;
          const T *wp = w.data() + (a * g.kw + bb) * c_count;
          for (std::size_t c = 0; c < c_count; ++c)
            acc[c] += xp[c] * wp[c];
        }
      }
    }
  });
  return y;
}

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const Tensor<T> &x, const Tensor<T> &w,
                                       bool has_bias, const Tensor<T> &dy,
                                       std::size_t stride, Padding pad) {
  const auto g = conv_geom(x, w, stride, pad, true);
  const std::size_t cc = g.cin;
  require_same_shape(dy.shape(), {g.n, g.oh, g.ow, cc},
                     "depthwise_conv2d_backward");
  ConvGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(w.shape()),
                 has_bias ? Tensor<T>({cc}) : Tensor<T>()};
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T *gy = dy.data() + ((n * g.oh + oy) * g.ow + ox) * cc;
        if (has_bias)
          for (std::size_t c = 0; c < cc; ++c)
            r.db[c] += gy[c];
        for (std::size_t a = 0; a < g.kh; ++a) {
          const long iy = tap(oy, a, g.stride, g.ph, g.h);
          if (iy < 0)
            continue;
          for (std::size_t bb = 0; bb < g.kw; ++bb) {
            const long ix = tap(ox, bb, g.stride, g.pw, g.w);
            if (ix < 0)
              continue;
            const std::size_t xo = ((n * g.h + iy) * g.w + ix) * cc;
            const std::size_t wo = (a * g.kw + bb) * cc;
            for (std::size_t c = 0; c < cc; ++c) {
              r.dx[xo + c] += gy[c] * w[wo + c];
              r.dw[wo + c] += gy[c] * x[xo + c];
            }
          }
        }
      }
  return r;
}

// ------------------------------------------------------ transposed conv

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T> &x, const Tensor<T> &w,
                           const Tensor<T> &b, std::size_t stride) {
  require_rank(x.shape(), 4, "conv_transpose2d");
  require_rank(w.shape(), 4, "conv_transpose2d");
  if (stride < 1)
    throw ShapeError("conv_transpose2d: stride must be >= 1");
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  if (w.dim(2) != cin)
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) +
                     " does not match weights " + shape_str(w.shape()));
  check_bias(b, cout, "conv_transpose2d");
  const std::size_t oh = (h - 1) * stride + kh, ow = (wd - 1) * stride + kw;
  Tensor<T> y({n, oh, ow, cout});
  if (!b.empty())
    for (std::size_t i = 0; i < y.numel(); ++i)
      y[i] = b[i % cout];
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t iy = 0; iy < h; ++iy)
      for (std::size_t ix = 0; ix < wd; ++ix) {
        const T *xp = x.data() + ((bn * h + iy) * wd + ix) * cin;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t bb = 0; bb < kw; ++bb) {
            T *yp = y.data() +
                    ((bn * oh + iy * stride + a) * ow + ix * stride + bb) * cout;
            const T *wp = w.data() + (a * kw + bb) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T xv = xp[ci];
              for (std::size_t co = 0; co < cout; ++co)
                yp[co] += xv * wp[ci * cout + co];
            }
          }
      }
  return y;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T> &x, const Tensor<T> &w,
                                       bool has_bias, const Tensor<T> &dy,
                                       std::size_t stride) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const std::size_t oh = (h - 1) * stride + kh, ow = (wd - 1) * stride + kw;
  require_same_shape(dy.shape(), {n, oh, ow, cout},
                     "conv_transpose2d_backward");
  ConvGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(w.shape()),
                 has_bias ? Tensor<T>({cout}) : Tensor<T>()};
  if (has_bias)
    for (std::size_t i = 0; i < dy.numel(); ++i)
      r.db[i % cout] += dy[i];
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t iy = 0; iy < h; ++iy)
      for (std::size_t ix = 0; ix < wd; ++ix) {
        const std::size_t xo = ((bn * h + iy) * wd + ix) * cin;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t bb = 0; bb < kw; ++bb) {
            const T *gy = dy.data() + ((bn * oh + iy * stride + a) * ow +
                                       ix * stride + bb) *
                                          cout;
            const std::size_t wo = (a * kw + bb) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              T s = 0;
              const T xv = x[xo + ci];
              for (std::size_t co = 0; co < cout; ++co) {
                s += gy[co] * w[wo + ci * cout + co];
                r.dw[wo + ci * cout + co] += xv * gy[co];
              }
              r.dx[xo + ci] += s;
            }
          }
      }
  return r;
}

// ---------------------------------------------------------------- conv1d

template <typename T>
Tensor<T> conv1d_channels(const Tensor<T> &x, const Tensor<T> &w) {
  if (w.rank() != 1 || w.dim(0) % 2 == 0)
    throw ShapeError("conv1d_channels: kernel width must be odd, got " +
                     shape_str(w.shape()));
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  const long r = static_cast<long>(w.dim(0) / 2);
  Tensor<T> y(x.shape());
  for (std::size_t row = 0; row < rows; ++row) {
    const T *xp = x.data() + row * c;
    T *yp = y.data() + row * c;
    for (long i = 0; i < static_cast<long>(c); ++i) {
      T s = 0;
      for (long t = 0; t < static_cast<long>(w.dim(0)); ++t) {
        const long j = i + t - r;
        if (j >= 0 && j < static_cast<long>(c))
          s += w[t] * xp[j];
      }
      yp[i] = s;
    }
  }
  return y;
}

template <typename T>
Conv1dGrads<T> conv1d_channels_backward(const Tensor<T> &x,
                                        const Tensor<T> &w,
                                        const Tensor<T> &dy) {
  require_same_shape(x.shape(), dy.shape(), "conv1d_channels_backward");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  const long r = static_cast<long>(w.dim(0) / 2);
  Conv1dGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape())};
  for (std::size_t row = 0; row < rows; ++row) {
    const T *xp = x.data() + row * c;
    const T *gp = dy.data() + row * c;
    T *dxp = g.dx.data() + row * c;
    for (long i = 0; i < static_cast<long>(c); ++i)
      for (long t = 0; t < static_cast<long>(w.dim(0)); ++t) {
        const long j = i + t - r;
        if (j >= 0 && j < static_cast<long>(c)) {
          dxp[j] += w[t] * gp[i];
          g.dw[t] += xp[j] * gp[i];
        }
      }
  }
  return g;
}

// ------------------------------------------------------------ layer norm

template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma,
                     const Tensor<T> &beta, T eps, LayerNormCache<T> *cache) {
  if (!(eps > 0))
    throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t c = x.shape().back();
  require_same_shape(gamma.shape(), {c}, "layer_norm gamma");
  require_same_shape(beta.shape(), {c}, "layer_norm beta");
  const std::size_t rows = x.numel() / c;
  Tensor<T> y(x.shape());
  if (cache) {
    cache->mean.assign(rows, T(0));
    cache->rstd.assign(rows, T(0));
  }
  for (std::size_t row = 0; row < rows; ++row) {
    const T *xp = x.data() + row * c;
    T mean = 0;
    for (std::size_t i = 0; i < c; ++i)
      mean += xp[i];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t i = 0; i < c; ++i)
      var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<T>(c);
    const T rstd = T(1) / std::sqrt(var + eps);
    T *yp = y.data() + row * c;
    for (std::size_t i = 0; i < c; ++i)
      yp[i] = (xp[i] - mean) * rstd * gamma[i] + beta[i];
    if (cache) {
      cache->mean[row] = mean;
      cache->rstd[row] = rstd;
    }
  }
  return y;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T> &x,
                                      const Tensor<T> &gamma,
                                      const LayerNormCache<T> &cache,
                                      const Tensor<T> &dy) {
  require_same_shape(x.shape(), dy.shape(), "layer_norm_backward");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({c}), Tensor<T>({c})};
  std::vector<T> xhat(c), dxhat(c);
  for (std::size_t row = 0; row < rows; ++row) {
    const T *xp = x.data() + row * c;
    const T *gp = dy.data() + row * c;
    const T mean = cache.mean[row], rstd = cache.rstd[row];
    T m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < c; ++i) {
      xhat[i] = (xp[i] - mean) * rstd;
      dxhat[i] = gp[i] * gamma[i];
      g.dgamma[i] += gp[i] * xhat[i];
      g.dbeta[i] += gp[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * xhat[i];
    }
    m1 /= static_cast<T>(c);
    m2 /= static_cast<T>(c);
    T *dxp = g.dx.data() + row * c;
    for (std::size_t i = 0; i < c; ++i)
      dxp[i] = rstd * (dxhat[i] - m1 - xhat[i] * m2);
  }
  return g;
}

// ----------------------------------------------------------- activations

template <typename T> T gelu(T x) {
  return x * T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T> T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> /
                std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <typename T> T sigmoid(T x) {
  if (x >= 0)
    return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T> Tensor<T> gelu(const Tensor<T> &x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y[i] = gelu(x[i]);
  return y;
}

template <typename T> Tensor<T> sigmoid(const Tensor<T> &x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y[i] = sigmoid(x[i]);
  return y;
}

template <typename T> Tensor<T> leaky_relu(const Tensor<T> &x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y[i] = x[i] >= 0 ? x[i] : slope * x[i];
  return y;
}

template <typename T> Tensor<T> softmax_lastdim(const Tensor<T> &x) {
  const std::size_t c = x.shape().back();
  Tensor<T> y(x.shape());
  for (std::size_t row = 0; row < x.numel() / c; ++row) {
    const T *xp = x.data() + row * c;
    T *yp = y.data() + row * c;
    const T mx = *std::max_element(xp, xp + c);
    T s = 0;
    for (std::size_t i = 0; i < c; ++i) {
      yp[i] = std::exp(xp[i] - mx);
      s += yp[i];
    }
    for (std::size_t i = 0; i < c; ++i)
      yp[i] /= s;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_lastdim_backward(const Tensor<T> &y, const Tensor<T> &dy) {
  require_same_shape(y.shape(), dy.shape(), "softmax_lastdim_backward");
  const std::size_t c = y.shape().back();
  Tensor<T> dx(y.shape());
  for (std::size_t row = 0; row < y.numel() / c; ++row) {
    const T *yp = y.data() + row * c;
    const T *gp = dy.data() + row * c;
    T dot = 0;
    for (std::size_t i = 0; i < c; ++i)
      dot += gp[i] * yp[i];
    for (std::size_t i = 0; i < c; ++i)
      dx[row * c + i] = yp[i] * (gp[i] - dot);
  }
  return dx;
}

// ------------------------------------------------------------- reduction

template <typename T> Tensor<T> global_avg_pool(const Tensor<T> &x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<T> y({n, 1, 1, c});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch)
        y[b * c + ch] += x[(b * hw + p) * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch)
      y[b * c + ch] /= static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape &x_shape, const Tensor<T> &dy) {
  const std::size_t n = x_shape[0], hw = x_shape[1] * x_shape[2],
                    c = x_shape[3];
  require_same_shape(dy.shape(), {n, 1, 1, c}, "global_avg_pool_backward");
  Tensor<T> dx(x_shape);
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch)
        dx[(b * hw + p) * c + ch] = dy[b * c + ch] * inv;
  return dx;
}

// -------------------------------------------------------------- resizing

namespace {

struct Tap1d {
  std::size_t i0, i1;
  double w1; // weight of i1; i0 gets 1 - w1
};

std::vector<Tap1d> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap1d> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (s < 0)
      s = 0;
    auto i0 = static_cast<std::size_t>(std::floor(s));
    if (i0 > in - 1)
      i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

} // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T> &x, std::size_t out_h,
                          std::size_t out_w) {
  require_rank(x.shape(), 4, "resize_bilinear");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor<T> y({n, out_h, out_w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T wy1 = static_cast<T>(ty[oy].w1), wy0 = T(1) - wy1;
        const T wx1 = static_cast<T>(tx[ox].w1), wx0 = T(1) - wx1;
        const T *p00 = &x.at(b, ty[oy].i0, tx[ox].i0, 0);
        const T *p01 = &x.at(b, ty[oy].i0, tx[ox].i1, 0);
        const T *p10 = &x.at(b, ty[oy].i1, tx[ox].i0, 0);
        const T *p11 = &x.at(b, ty[oy].i1, tx[ox].i1, 0);
        T *yp = &y.at(b, oy, ox, 0);
        for (std::size_t ch = 0; ch < c; ++ch)
          yp[ch] = wy0 * (wx0 * p00[ch] + wx1 * p01[ch]) +
                   wy1 * (wx0 * p10[ch] + wx1 * p11[ch]);
      }
  return y;
}

template <typename T>
Tensor<T> resize_bilinear_backward(const Shape &x_shape, const Tensor<T> &dy) {
  const std::size_t n = x_shape[0], h = x_shape[1], w = x_shape[2],
                    c = x_shape[3];
  const std::size_t out_h = dy.dim(1), out_w = dy.dim(2);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor<T> dx(x_shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T wy1 = static_cast<T>(ty[oy].w1), wy0 = T(1) - wy1;
        const T wx1 = static_cast<T>(tx[ox].w1), wx0 = T(1) - wx1;
        T *p00 = &dx.at(b, ty[oy].i0, tx[ox].i0, 0);
        T *p01 = &dx.at(b, ty[oy].i0, tx[ox].i1, 0);
        T *p10 = &dx.at(b, ty[oy].i1, tx[ox].i0, 0);
        T *p11 = &dx.at(b, ty[oy].i1, tx[ox].i1, 0);
        const T *g = &dy.at(b, oy, ox, 0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          p00[ch] += wy0 * wx0 * g[ch];
          p01[ch] += wy0 * wx1 * g[ch];
          p10[ch] += wy1 * wx0 * g[ch];
          p11[ch] += wy1 * wx1 * g[ch];
        }
      }
  return dx;
}

Shape scaled_shape(const Shape &s, Scale sc) {
  if (s.size() != 4)
    throw ShapeError("resize: expected NHWC tensor, got " + shape_str(s));
  switch (sc) {
  case Scale::up2:
    return {s[0], s[1] * 2, s[2] * 2, s[3]};
  case Scale::up4:
    return {s[0], s[1] * 4, s[2] * 4, s[3]};
  case Scale::down2:
    if (s[1] % 2 != 0 || s[2] % 2 != 0)
      throw ShapeError("resize x1/2 requires even spatial dims, got " +
                       shape_str(s));
    return {s[0], s[1] / 2, s[2] / 2, s[3]};
  }
  return s;
}

template <typename T> Tensor<T> resize(const Tensor<T> &x, Scale s) {
  const auto out = scaled_shape(x.shape(), s);
  return resize_bilinear(x, out[1], out[2]);
}

// ----------------------------------------------------------- elementwise

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    y[i] = a[i] + b[i];
  return y;
}

template <typename T> Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    y[i] = a[i] - b[i];
  return y;
}

namespace {

bool is_channel_broadcast(const Shape &a, const Shape &b) {
  return a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == 1 &&
         b[2] == 1 && b[3] == a[3];
}

} // namespace

template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  Tensor<T> y(a.shape());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.numel(); ++i)
      y[i] = a[i] * b[i];
    return y;
  }
  if (!is_channel_broadcast(a.shape(), b.shape()))
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t hw = a.dim(1) * a.dim(2), c = a.dim(3);
  for (std::size_t n = 0; n < a.dim(0); ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (n * hw + p) * c + ch;
        y[i] = a[i] * b[n * c + ch];
      }
  return y;
}

template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T> &g, const Shape &target) {
  if (g.shape() == target)
    return g;
  if (!is_channel_broadcast(g.shape(), target))
    throw ShapeError("reduce_to_shape: cannot reduce " + shape_str(g.shape()) +
                     " to " + shape_str(target));
  Tensor<T> r(target);
  const std::size_t hw = g.dim(1) * g.dim(2), c = g.dim(3);
  for (std::size_t n = 0; n < g.dim(0); ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch)
        r[n * c + ch] += g[(n * hw + p) * c + ch];
  return r;
}

template <typename T> Tensor<T> scale(const Tensor<T> &a, T s) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    y[i] = a[i] * s;
  return y;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T> *> &xs) {
  if (xs.empty())
    throw ShapeError("concat_channels: no inputs");
  Shape out = xs.front()->shape();
  std::size_t total = 0;
  for (const auto *t : xs) {
    const Shape &s = t->shape();
    if (s.size() != out.size() ||
        !std::equal(s.begin(), s.end() - 1, out.begin()))
      throw ShapeError("concat_channels: shape mismatch " + shape_str(out) +
                       " vs " + shape_str(s));
    total += s.back();
  }
  out.back() = total;
  Tensor<T> y(out);
  const std::size_t rows = y.numel() / total;
  std::size_t off = 0;
  for (const auto *t : xs) {
    const std::size_t c = t->shape().back();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(t->data() + r * c, c, y.data() + r * total + off);
    off += c;
  }
  return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T> &x, std::size_t begin,
                         std::size_t count) {
  const std::size_t c = x.shape().back();
  if (count == 0 || begin + count > c)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " +
                     shape_str(x.shape()));
  Shape out = x.shape();
  out.back() = count;
  Tensor<T> y(out);
  const std::size_t rows = x.numel() / c;
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * c + begin, count, y.data() + r * count);
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels_half(const Tensor<T> &x) {
  const std::size_t c = x.shape().back();
  if (c % 2 != 0)
    throw ShapeError("split_channels_half: channel count " +
                     std::to_string(c) + " is odd");
  return {slice_channels(x, 0, c / 2), slice_channels(x, c / 2, c / 2)};
}

// ------------------------------------------------------- padding/cropping

namespace {

std::size_t reflect_index(std::size_t i, std::size_t n) {
  return i < n ? i : 2 * (n - 1) - i;
}

} // namespace

template <typename T>
Tensor<T> reflect_pad(const Tensor<T> &x, std::size_t pad_h,
                      std::size_t pad_w) {
  require_rank(x.shape(), 4, "reflect_pad");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (pad_h >= h || pad_w >= w)
    throw ShapeError("reflect_pad: padding exceeds input " +
                     shape_str(x.shape()));
  Tensor<T> y({n, h + pad_h, w + pad_w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h + pad_h; ++i)
      for (std::size_t j = 0; j < w + pad_w; ++j)
        std::copy_n(&x.at(b, reflect_index(i, h), reflect_index(j, w), 0), c,
                    &y.at(b, i, j, 0));
  return y;
}

template <typename T>
Tensor<T> reflect_pad_backward(const Shape &x_shape, const Tensor<T> &dy) {
  const std::size_t n = x_shape[0], h = x_shape[1], w = x_shape[2],
                    c = x_shape[3];
  Tensor<T> dx(x_shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < dy.dim(1); ++i)
      for (std::size_t j = 0; j < dy.dim(2); ++j) {
        T *d = &dx.at(b, reflect_index(i, h), reflect_index(j, w), 0);
        const T *g = &dy.at(b, i, j, 0);
        for (std::size_t ch = 0; ch < c; ++ch)
          d[ch] += g[ch];
      }
  return dx;
}

template <typename T>
Tensor<T> crop(const Tensor<T> &x, std::size_t h, std::size_t w) {
  require_rank(x.shape(), 4, "crop");
  if (h > x.dim(1) || w > x.dim(2))
    throw ShapeError("crop: target larger than input " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(3);
  Tensor<T> y({n, h, w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(&x.at(b, i, 0, 0), w * c, &y.at(b, i, 0, 0));
  return y;
}

// --------------------------------------------------------- instantiation

#define DDNT_OPS_INSTANTIATE(T)                                                \
  template Tensor<T> conv2d(const Tensor<T> &, const Tensor<T> &,              \
                            const Tensor<T> &, std::size_t, Padding);          \
  template ConvGrads<T> conv2d_backward(const Tensor<T> &, const Tensor<T> &,  \
                                        bool, const Tensor<T> &, std::size_t,  \
                                        Padding);                              \
  template Tensor<T> depthwise_conv2d(const Tensor<T> &, const Tensor<T> &,    \
                                      const Tensor<T> &, std::size_t,          \
                                      Padding);                                \
  template ConvGrads<T> depthwise_conv2d_backward(                             \
      const Tensor<T> &, const Tensor<T> &, bool, const Tensor<T> &,           \
      std::size_t, Padding);                                                   \
  template Tensor<T> conv_transpose2d(const Tensor<T> &, const Tensor<T> &,    \
                                      const Tensor<T> &, std::size_t);         \
  template ConvGrads<T> conv_transpose2d_backward(                             \
      const Tensor<T> &, const Tensor<T> &, bool, const Tensor<T> &,           \
      std::size_t);                                                            \
  template Tensor<T> conv1d_channels(const Tensor<T> &, const Tensor<T> &);    \
  template Conv1dGrads<T> conv1d_channels_backward(                            \
      const Tensor<T> &, const Tensor<T> &, const Tensor<T> &);                \
  template Tensor<T> layer_norm(const Tensor<T> &, const Tensor<T> &,          \
                                const Tensor<T> &, T, LayerNormCache<T> *);    \
  template LayerNormGrads<T> layer_norm_backward(                              \
      const Tensor<T> &, const Tensor<T> &, const LayerNormCache<T> &,         \
      const Tensor<T> &);                                                      \
  template T gelu(T);                                                          \
  template T gelu_grad(T);                                                     \
  template T sigmoid(T);                                                       \
  template Tensor<T> gelu(const Tensor<T> &);                                  \
  template Tensor<T> sigmoid(const Tensor<T> &);                               \
  template Tensor<T> leaky_relu(const Tensor<T> &, T);                         \
  template Tensor<T> softmax_lastdim(const Tensor<T> &);                       \
  template Tensor<T> softmax_lastdim_backward(const Tensor<T> &,               \
                                              const Tensor<T> &);              \
  template Tensor<T> global_avg_pool(const Tensor<T> &);                       \
  template Tensor<T> global_avg_pool_backward(const Shape &,                   \
                                              const Tensor<T> &);              \
  template Tensor<T> resize_bilinear(const Tensor<T> &, std::size_t,           \
                                     std::size_t);                             \
  template Tensor<T> resize_bilinear_backward(const Shape &,                   \
                                              const Tensor<T> &);              \
  template Tensor<T> resize(const Tensor<T> &, Scale);                         \
  template Tensor<T> add(const Tensor<T> &, const Tensor<T> &);                \
  template Tensor<T> sub(const Tensor<T> &, const Tensor<T> &);                \
  template Tensor<T> mul(const Tensor<T> &, const Tensor<T> &);                \
  template Tensor<T> reduce_to_shape(const Tensor<T> &, const Shape &);        \
  template Tensor<T> scale(const Tensor<T> &, T);                              \
  template Tensor<T> concat_channels(const std::vector<const Tensor<T> *> &);  \
  template Tensor<T> slice_channels(const Tensor<T> &, std::size_t,            \
                                    std::size_t);                              \
  template std::pair<Tensor<T>, Tensor<T>> split_channels_half(                \
      const Tensor<T> &);                                                      \
  template Tensor<T> reflect_pad(const Tensor<T> &, std::size_t, std::size_t); \
  template Tensor<T> reflect_pad_backward(const Shape &, const Tensor<T> &);   \
  template Tensor<T> crop(const Tensor<T> &, std::size_t, std::size_t);

DDNT_OPS_INSTANTIATE(float)
DDNT_OPS_INSTANTIATE(double)

} // namespace ddnt::ops
