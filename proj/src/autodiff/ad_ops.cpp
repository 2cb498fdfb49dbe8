// SPDX-License-Identifier: Apache-2.0
#include "ddnt/ad_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace ddnt::ad {

namespace {

template <typename T> Tape<T> &tape_of(Var<T> v) {
  if (v.tape == nullptr)
    throw std::invalid_argument("op on a detached Var");
  return *v.tape;
}

template <typename T>
std::vector<Var<T>> with_bias(Var<T> x, Var<T> w, OptVar<T> b) {
  std::vector<Var<T>> p{x, w};
  if (b)
    p.push_back(*b);
  return p;
}

template <typename T> Tensor<T> bias_value(const std::optional<Var<T>> &b) {
  return b ? b->value() : Tensor<T>();
}

} // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, OptVar<T> b, std::size_t stride,
              Padding pad) {
  auto &tp = tape_of(x);
  auto y = ops::conv2d(x.value(), w.value(), bias_value(b), stride, pad);
  return tp.record(std::move(y), with_bias(x, w, b),
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     auto r = ops::conv2d_backward(t.value(x), t.value(w),
                                                   b.has_value(), g, stride,
                                                   pad);
                     t.accumulate(x, std::move(r.dx));
                     t.accumulate(w, std::move(r.dw));
                     if (b)
                       t.accumulate(*b, std::move(r.db));
                   });
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, OptVar<T> b,
                        std::size_t stride, Padding pad) {
  auto &tp = tape_of(x);
  auto y =
      ops::depthwise_conv2d(x.value(), w.value(), bias_value(b), stride, pad);
  return tp.record(std::move(y), with_bias(x, w, b),
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     auto r = ops::depthwise_conv2d_backward(
                         t.value(x), t.value(w), b.has_value(), g, stride, pad);
                     t.accumulate(x, std::move(r.dx));
                     t.accumulate(w, std::move(r.dw));
                     if (b)
                       t.accumulate(*b, std::move(r.db));
                   });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, OptVar<T> b,
                        std::size_t stride) {
  auto &tp = tape_of(x);
  auto y = ops::conv_transpose2d(x.value(), w.value(), bias_value(b), stride);
  return tp.record(std::move(y), with_bias(x, w, b),
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     auto r = ops::conv_transpose2d_backward(
                         t.value(x), t.value(w), b.has_value(), g, stride);
                     t.accumulate(x, std::move(r.dx));
                     t.accumulate(w, std::move(r.dw));
                     if (b)
                       t.accumulate(*b, std::move(r.db));
                   });
}

template <typename T> Var<T> conv1d_channels(Var<T> x, Var<T> w) {
  auto &tp = tape_of(x);
  auto y = ops::conv1d_channels(x.value(), w.value());
  return tp.record(std::move(y), {x, w}, [=](Tape<T> &t, const Tensor<T> &g) {
    auto r = ops::conv1d_channels_backward(t.value(x), t.value(w), g);
    t.accumulate(x, std::move(r.dx));
    t.accumulate(w, std::move(r.dw));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  auto &tp = tape_of(x);
  ops::LayerNormCache<T> cache;
  auto y = ops::layer_norm(x.value(), gamma.value(), beta.value(), eps, &cache);
  return tp.record(std::move(y), {x, gamma, beta},
                   [=, cache = std::move(cache)](Tape<T> &t,
                                                 const Tensor<T> &g) {
                     auto r = ops::layer_norm_backward(t.value(x),
                                                       t.value(gamma), cache, g);
                     t.accumulate(x, std::move(r.dx));
                     t.accumulate(gamma, std::move(r.dgamma));
                     t.accumulate(beta, std::move(r.dbeta));
                   });
}

template <typename T> Var<T> gelu(Var<T> x) {
  auto &tp = tape_of(x);
  return tp.record(ops::gelu(x.value()), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     const auto &xv = t.value(x);
                     Tensor<T> dx(xv.shape());
                     for (std::size_t i = 0; i < xv.numel(); ++i)
                       dx[i] = g[i] * ops::gelu_grad(xv[i]);
                     t.accumulate(x, std::move(dx));
                   });
}

template <typename T> Var<T> sigmoid(Var<T> x) {
  auto &tp = tape_of(x);
  auto y = ops::sigmoid(x.value());
  auto yv = y;
  return tp.record(std::move(y), {x},
                   [=, yv = std::move(yv)](Tape<T> &t, const Tensor<T> &g) {
                     Tensor<T> dx(yv.shape());
                     for (std::size_t i = 0; i < yv.numel(); ++i)
                       dx[i] = g[i] * yv[i] * (T(1) - yv[i]);
                     t.accumulate(x, std::move(dx));
                   });
}

template <typename T> Var<T> leaky_relu(Var<T> x, T slope) {
  auto &tp = tape_of(x);
  return tp.record(ops::leaky_relu(x.value(), slope), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     const auto &xv = t.value(x);
                     Tensor<T> dx(xv.shape());
                     for (std::size_t i = 0; i < xv.numel(); ++i)
                       dx[i] = xv[i] >= 0 ? g[i] : slope * g[i];
                     t.accumulate(x, std::move(dx));
                   });
}

template <typename T> Var<T> softmax_lastdim(Var<T> x) {
  auto &tp = tape_of(x);
  auto y = ops::softmax_lastdim(x.value());
  auto yv = y;
  return tp.record(std::move(y), {x},
                   [=, yv = std::move(yv)](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(x, ops::softmax_lastdim_backward(yv, g));
                   });
}

template <typename T> Var<T> global_avg_pool(Var<T> x) {
  auto &tp = tape_of(x);
  return tp.record(ops::global_avg_pool(x.value()), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(x, ops::global_avg_pool_backward(
                                         t.value(x).shape(), g));
                   });
}

template <typename T> Var<T> resize(Var<T> x, Scale s) {
  auto &tp = tape_of(x);
  return tp.record(ops::resize(x.value(), s), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(x, ops::resize_bilinear_backward(
                                         t.value(x).shape(), g));
                   });
}

template <typename T> Var<T> add(Var<T> a, Var<T> b) {
  auto &tp = tape_of(a);
  return tp.record(ops::add(a.value(), b.value()), {a, b},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(a, g);
                     t.accumulate(b, g);
                   });
}

template <typename T> Var<T> sub(Var<T> a, Var<T> b) {
  auto &tp = tape_of(a);
  return tp.record(ops::sub(a.value(), b.value()), {a, b},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(a, g);
                     t.accumulate(b, ops::scale(g, T(-1)));
                   });
}

template <typename T> Var<T> mul(Var<T> a, Var<T> b) {
  auto &tp = tape_of(a);
  return tp.record(
      ops::mul(a.value(), b.value()), {a, b},
      [=](Tape<T> &t, const Tensor<T> &g) {
        const auto &av = t.value(a);
        const auto &bv = t.value(b);
        if (t.requires_grad(a))
          t.accumulate(a, ops::mul(g, bv));
        if (t.requires_grad(b))
          t.accumulate(b, ops::reduce_to_shape(ops::mul(g, av), bv.shape()));
      });
}

template <typename T> Var<T> scale(Var<T> a, T s) {
  auto &tp = tape_of(a);
  return tp.record(ops::scale(a.value(), s), {a},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(a, ops::scale(g, s));
                   });
}

template <typename T> Var<T> concat_channels(const std::vector<Var<T>> &xs) {
  if (xs.empty())
    throw ShapeError("concat_channels: no inputs");
  auto &tp = tape_of(xs.front());
  std::vector<const Tensor<T> *> vals;
  std::vector<std::size_t> widths;
  for (const auto &v : xs) {
    vals.push_back(&v.value());
    widths.push_back(v.shape().back());
  }
  auto y = ops::concat_channels(vals);
  return tp.record(std::move(y), xs, [=](Tape<T> &t, const Tensor<T> &g) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (t.requires_grad(xs[i]))
        t.accumulate(xs[i], ops::slice_channels(g, off, widths[i]));
      off += widths[i];
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  auto &tp = tape_of(x);
  return tp.record(ops::slice_channels(x.value(), begin, count), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     const auto &xs = t.value(x).shape();
                     const std::size_t c = xs.back();
                     Tensor<T> dx(xs);
                     const std::size_t rows = dx.numel() / c;
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t i = 0; i < count; ++i)
                         dx[r * c + begin + i] = g[r * count + i];
                     t.accumulate(x, std::move(dx));
                   });
}

template <typename T> std::pair<Var<T>, Var<T>> split_channels_half(Var<T> x) {
  const std::size_t c = x.shape().back();
  if (c % 2 != 0)
    throw ShapeError("split_channels_half: channel count " +
                     std::to_string(c) + " is odd");
  return {slice_channels(x, 0, c / 2), slice_channels(x, c / 2, c / 2)};
}

template <typename T>
Var<T> reflect_pad(Var<T> x, std::size_t pad_h, std::size_t pad_w) {
  auto &tp = tape_of(x);
  return tp.record(ops::reflect_pad(x.value(), pad_h, pad_w), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(x, ops::reflect_pad_backward(
                                         t.value(x).shape(), g));
                   });
}

template <typename T> Var<T> crop(Var<T> x, std::size_t h, std::size_t w) {
  auto &tp = tape_of(x);
  return tp.record(ops::crop(x.value(), h, w), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     const auto &xs = t.value(x).shape();
                     Tensor<T> dx(xs);
                     for (std::size_t n = 0; n < xs[0]; ++n)
                       for (std::size_t i = 0; i < h; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           for (std::size_t c = 0; c < xs[3]; ++c)
                             dx.at(n, i, j, c) = g.at(n, i, j, c);
                     t.accumulate(x, std::move(dx));
                   });
}

template <typename T> Var<T> sum(Var<T> x) {
  auto &tp = tape_of(x);
  T s = 0;
  for (auto v : x.value().vec())
    s += v;
  return tp.record(Tensor<T>({1}, s), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(x, Tensor<T>(t.value(x).shape(), g[0]));
                   });
}

template <typename T> Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.value().numel());
  return scale(sum(x), T(1) / n);
}

template <typename T> Var<T> weighted_sum(Var<T> x, const Tensor<T> &weights) {
  require_same_shape(x.shape(), weights.shape(), "weighted_sum");
  auto &tp = tape_of(x);
  T s = 0;
  for (std::size_t i = 0; i < weights.numel(); ++i)
    s += x.value()[i] * weights[i];
  return tp.record(Tensor<T>({1}, s), {x},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     t.accumulate(x, ops::scale(weights, g[0]));
                   });
}

template <typename T> Var<T> l1_loss(Var<T> pred, Var<T> target) {
  require_same_shape(pred.shape(), target.shape(), "l1_loss");
  auto &tp = tape_of(pred);
  const auto &p = pred.value();
  const auto &q = target.value();
  const T n = static_cast<T>(p.numel());
  T s = 0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    s += std::abs(p[i] - q[i]);
  return tp.record(Tensor<T>({1}, s / n), {pred, target},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     const auto &pv = t.value(pred);
                     const auto &qv = t.value(target);
                     Tensor<T> d(pv.shape());
                     for (std::size_t i = 0; i < pv.numel(); ++i) {
                       const T r = pv[i] - qv[i];
                       d[i] = (r > 0 ? T(1) : (r < 0 ? T(-1) : T(0))) * g[0] / n;
                     }
                     if (t.requires_grad(target))
                       t.accumulate(target, ops::scale(d, T(-1)));
                     t.accumulate(pred, std::move(d));
                   });
}

template <typename T>
Var<T> charbonnier_loss(Var<T> pred, Var<T> target, T eps) {
  require_same_shape(pred.shape(), target.shape(), "charbonnier_loss");
  auto &tp = tape_of(pred);
  const auto &p = pred.value();
  const auto &q = target.value();
  const T n = static_cast<T>(p.numel());
  T s = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const T r = p[i] - q[i];
    s += std::sqrt(r * r + eps * eps);
  }
  return tp.record(Tensor<T>({1}, s / n), {pred, target},
                   [=](Tape<T> &t, const Tensor<T> &g) {
                     const auto &pv = t.value(pred);
                     const auto &qv = t.value(target);
                     Tensor<T> d(pv.shape());
                     for (std::size_t i = 0; i < pv.numel(); ++i) {
                       const T r = pv[i] - qv[i];
                       d[i] = r / std::sqrt(r * r + eps * eps) * g[0] / n;
                     }
                     if (t.requires_grad(target))
                       t.accumulate(target, ops::scale(d, T(-1)));
                     t.accumulate(pred, std::move(d));
                   });
}

#define DDNT_AD_INSTANTIATE(T)                                                 \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t,   \
                         Padding);                                             \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>, std::optional<Var<T>>,      \
                                   std::size_t, Padding);                      \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, std::optional<Var<T>>,      \
                                   std::size_t);                               \
  template Var<T> conv1d_channels(Var<T>, Var<T>);                             \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                       \
  template Var<T> gelu(Var<T>);                                                \
  template Var<T> sigmoid(Var<T>);                                             \
  template Var<T> leaky_relu(Var<T>, T);                                       \
  template Var<T> softmax_lastdim(Var<T>);                                     \
  template Var<T> global_avg_pool(Var<T>);                                     \
  template Var<T> resize(Var<T>, Scale);                                       \
  template Var<T> add(Var<T>, Var<T>);                                         \
  template Var<T> sub(Var<T>, Var<T>);                                         \
  template Var<T> mul(Var<T>, Var<T>);                                         \
  template Var<T> scale(Var<T>, T);                                            \
  template Var<T> concat_channels(const std::vector<Var<T>> &);                \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);            \
  template std::pair<Var<T>, Var<T>> split_channels_half(Var<T>);              \
  template Var<T> reflect_pad(Var<T>, std::size_t, std::size_t);               \
  template Var<T> crop(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> sum(Var<T>);                                                 \
  template Var<T> mean(Var<T>);                                                \
  template Var<T> weighted_sum(Var<T>, const Tensor<T> &);                     \
  template Var<T> l1_loss(Var<T>, Var<T>);                                     \
  template Var<T> charbonnier_loss(Var<T>, Var<T>, T);

DDNT_AD_INSTANTIATE(float)
DDNT_AD_INSTANTIATE(double)

} // namespace ddnt::ad
