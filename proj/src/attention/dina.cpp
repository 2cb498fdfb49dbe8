// SPDX-License-Identifier: Apache-2.0
#include "ddnt/dina.hpp"

#include "ddnt/ad_ops.hpp"
#include "ddnt/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ddnt {

void AttnGeometry::validate() const {
  if (kernel == 0 || kernel % 2 == 0)
    throw std::invalid_argument("attention neighborhood size must be odd, got " +
                                std::to_string(kernel));
  if (dilation < 1)
    throw std::invalid_argument("attention dilation must be >= 1");
  if (heads < 1 || head_dim < 1)
    throw std::invalid_argument("attention needs >= 1 head of dim >= 1");
  if (height < kernel * dilation || width < kernel * dilation)
    throw std::invalid_argument(
        "attention grid " + std::to_string(height) + "x" +
        std::to_string(width) + " is smaller than kernel*dilation = " +
        std::to_string(kernel) + "*" + std::to_string(dilation));
}

std::vector<std::size_t> neighbor_indices(std::size_t n, std::size_t i,
                                          std::size_t k, std::size_t dilation) {
  if (k == 0 || k % 2 == 0)
    throw std::invalid_argument("neighbor_indices: k must be odd");
  if (dilation < 1 || n < k * dilation)
    throw std::invalid_argument(
        "neighbor_indices: axis length " + std::to_string(n) +
        " < k*dilation = " + std::to_string(k * dilation));
  if (i >= n)
    throw std::out_of_range("neighbor_indices: index " + std::to_string(i) +
                            " outside axis of length " + std::to_string(n));
  const std::size_t g = i % dilation;
  const std::size_t members = (n - 1 - g) / dilation + 1;
  const std::size_t pos = (i - g) / dilation;
  const std::size_t half = k / 2;
  std::size_t start = pos > half ? pos - half : 0;
  start = std::min(start, members - k);
  std::vector<std::size_t> out(k);
  for (std::size_t j = 0; j < k; ++j)
    out[j] = g + (start + j) * dilation;
  return out;
}

namespace {

// Per-axis neighbor indices and bias-table offsets for every position.
struct AxisTable {
  std::size_t k = 0;
  std::vector<std::size_t> idx;  // [n*k]
  std::vector<std::size_t> bias; // [n*k], offset + table_k - 1
};

AxisTable axis_table(std::size_t n, std::size_t k, std::size_t dilation,
                     std::size_t table_k) {
  AxisTable t;
  t.k = k;
  t.idx.resize(n * k);
  t.bias.resize(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = neighbor_indices(n, i, k, dilation);
    for (std::size_t j = 0; j < k; ++j) {
      t.idx[i * k + j] = nb[j];
      const long off = (static_cast<long>(nb[j]) - static_cast<long>(i)) /
                       static_cast<long>(dilation);
      t.bias[i * k + j] =
          static_cast<std::size_t>(off + static_cast<long>(table_k) - 1);
    }
  }
  return t;
}

template <typename T>
std::size_t check_inputs(const Tensor<T> &q, const Tensor<T> &k,
                         const Tensor<T> &v, const Tensor<T> &rel_bias,
                         const AttnGeometry &geom) {
  geom.validate();
  const Shape expect{q.shape().empty() ? 0 : q.dim(0), geom.height, geom.width,
                     geom.channels()};
  if (q.rank() != 4 || q.shape() != expect)
    throw ShapeError("neighborhood_attention: query " + shape_str(q.shape()) +
                     " does not match geometry " + shape_str(expect));
  require_same_shape(q.shape(), k.shape(), "neighborhood_attention key");
  require_same_shape(q.shape(), v.shape(), "neighborhood_attention value");
  if (rel_bias.rank() != 3 || rel_bias.dim(0) != geom.heads ||
      rel_bias.dim(1) != rel_bias.dim(2) || rel_bias.dim(1) % 2 == 0)
    throw ShapeError("neighborhood_attention: bias table " +
                     shape_str(rel_bias.shape()) + " is not [heads,2t-1,2t-1]");
  const std::size_t table_k = (rel_bias.dim(1) + 1) / 2;
  if (table_k < geom.kernel)
    throw ShapeError("neighborhood_attention: bias table " +
                     shape_str(rel_bias.shape()) + " too small for k=" +
                     std::to_string(geom.kernel));
  return table_k;
}

} // namespace

template <typename T>
Tensor<T> neighborhood_attention(const Tensor<T> &q, const Tensor<T> &k,
                                 const Tensor<T> &v, const Tensor<T> &rel_bias,
                                 const AttnGeometry &geom,
                                 std::vector<T> *probs) {
  const std::size_t table_k = check_inputs(q, k, v, rel_bias, geom);
  const std::size_t n = q.dim(0), H = geom.height, W = geom.width;
  const std::size_t dk = geom.head_dim, K = geom.kernel;
  const std::size_t KK = K * K, tw = 2 * table_k - 1;
  const auto rows = axis_table(H, K, geom.dilation, table_k);
  const auto cols = axis_table(W, K, geom.dilation, table_k);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));

  Tensor<T> out(q.shape());
  if (probs)
    probs->assign(n * geom.heads * H * W * KK, T(0));
  parallel_for(0, n * H, [&](std::size_t row) {
    const std::size_t b = row / H, r = row % H;
    std::vector<T> logit(KK);
    for (std::size_t c = 0; c < W; ++c) {
      const T *qp = &q.at(b, r, c, 0);
      T *op = &out.at(b, r, c, 0);
      for (std::size_t h = 0; h < geom.heads; ++h) {
        const T *bias_h = rel_bias.data() + h * tw * tw;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t a = 0; a < K; ++a)
          for (std::size_t bb = 0; bb < K; ++bb) {
            const T *kp = &k.at(b, rows.idx[r * K + a], cols.idx[c * K + bb],
                                h * dk);
            T s = 0;
            for (std::size_t d = 0; d < dk; ++d)
              s += qp[h * dk + d] * kp[d];
            s += bias_h[rows.bias[r * K + a] * tw + cols.bias[c * K + bb]];
            s *= inv_sqrt;
            logit[a * K + bb] = s;
            mx = std::max(mx, s);
          }
        T z = 0;
        for (auto &l : logit) {
          l = std::exp(l - mx);
          z += l;
        }
        for (auto &l : logit)
          l /= z;
        T *o = op + h * dk;
        for (std::size_t d = 0; d < dk; ++d)
          o[d] = 0;
        for (std::size_t a = 0; a < K; ++a)
          for (std::size_t bb = 0; bb < K; ++bb) {
            const T p = logit[a * K + bb];
            const T *vp = &v.at(b, rows.idx[r * K + a], cols.idx[c * K + bb],
                                h * dk);
            for (std::size_t d = 0; d < dk; ++d)
              o[d] += p * vp[d];
          }
        if (probs)
          std::copy(logit.begin(), logit.end(),
                    probs->begin() +
                        (((b * geom.heads + h) * H + r) * W + c) * KK);
      }
    }
  });
  return out;
}

template <typename T>
NeighborhoodAttentionGrads<T> neighborhood_attention_backward(
    const Tensor<T> &q, const Tensor<T> &k, const Tensor<T> &v,
    const Tensor<T> &rel_bias, const AttnGeometry &geom,
    const std::vector<T> &probs, const Tensor<T> &dout) {
  const std::size_t table_k = check_inputs(q, k, v, rel_bias, geom);
  require_same_shape(q.shape(), dout.shape(), "neighborhood_attention grad");
  const std::size_t n = q.dim(0), H = geom.height, W = geom.width;
  const std::size_t dk = geom.head_dim, K = geom.kernel, KK = K * K;
  const std::size_t tw = 2 * table_k - 1;
  const auto rows = axis_table(H, K, geom.dilation, table_k);
  const auto cols = axis_table(W, K, geom.dilation, table_k);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));

  NeighborhoodAttentionGrads<T> g{Tensor<T>(q.shape()), Tensor<T>(k.shape()),
                                  Tensor<T>(v.shape()),
                                  Tensor<T>(rel_bias.shape())};
  std::vector<T> gp(KK);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t h = 0; h < geom.heads; ++h) {
          const T *p = probs.data() + (((b * geom.heads + h) * H + r) * W + c) * KK;
          const T *go = &dout.at(b, r, c, h * dk);
          const T *qp = &q.at(b, r, c, h * dk);
          T *dq = &g.dq.at(b, r, c, h * dk);
          T dot = 0;
          for (std::size_t j = 0; j < KK; ++j) {
            const std::size_t a = j / K, bb = j % K;
            const std::size_t rr = rows.idx[r * K + a], cc = cols.idx[c * K + bb];
            const T *vp = &v.at(b, rr, cc, h * dk);
            T *dv = &g.dv.at(b, rr, cc, h * dk);
            T s = 0;
            for (std::size_t d = 0; d < dk; ++d) {
              s += go[d] * vp[d];
              dv[d] += p[j] * go[d];
            }
            gp[j] = s;
            dot += p[j] * s;
          }
          T *db = g.drel_bias.data() + h * tw * tw;
          for (std::size_t j = 0; j < KK; ++j) {
            const std::size_t a = j / K, bb = j % K;
            const std::size_t rr = rows.idx[r * K + a], cc = cols.idx[c * K + bb];
            const T dl = p[j] * (gp[j] - dot) * inv_sqrt;
            const T *kp = &k.at(b, rr, cc, h * dk);
            T *dkp = &g.dk.at(b, rr, cc, h * dk);
            for (std::size_t d = 0; d < dk; ++d) {
              dq[d] += dl * kp[d];
              dkp[d] += dl * qp[d];
            }
            db[rows.bias[r * K + a] * tw + cols.bias[c * K + bb]] += dl;
          }
        }
  return g;
}

template <typename T>
DinaParams<T> DinaParams<T>::from_store(const ParamStore<T> &store,
                                        const std::string &prefix) {
  auto get = [&](const char *n) {
    const std::string key = prefix + "." + n;
    return store.contains(key) ? store.at(key) : Tensor<T>();
  };
  return {get("q_w"), get("q_b"),     get("k_w"),   get("k_b"),
          get("v_w"), get("v_b"),     get("out_w"), get("out_b"),
          get("rel_bias")};
}

template <typename T>
void register_dina_params(ParamStore<T> &store, const std::string &prefix,
                          std::size_t channels, std::size_t heads,
                          std::size_t table_kernel, bool use_bias,
                          Initializer &init) {
  if (heads == 0 || channels % heads != 0)
    throw std::invalid_argument("attention channels " +
                                std::to_string(channels) +
                                " not divisible by heads " +
                                std::to_string(heads));
  for (const char *p : {"q", "k", "v", "out"}) {
    store.add(prefix + "." + p + "_w",
              init.trunc_normal<T>({1, 1, channels, channels}));
    if (use_bias)
      store.add(prefix + "." + p + "_b", init.zeros<T>({channels}));
  }
  const std::size_t tw = 2 * table_kernel - 1;
  store.add(prefix + ".rel_bias", init.zeros<T>({heads, tw, tw}));
}

namespace ad {

template <typename T>
Var<T> neighborhood_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> rel_bias,
                              const AttnGeometry &geom) {
  auto &tp = *q.tape;
  std::vector<T> probs;
  auto y = ddnt::neighborhood_attention(q.value(), k.value(), v.value(),
                                        rel_bias.value(), geom, &probs);
  return tp.record(
      std::move(y), {q, k, v, rel_bias},
      [=, probs = std::move(probs)](Tape<T> &t, const Tensor<T> &g) {
        auto r = neighborhood_attention_backward(t.value(q), t.value(k),
                                                 t.value(v), t.value(rel_bias),
                                                 geom, probs, g);
        t.accumulate(q, std::move(r.dq));
        t.accumulate(k, std::move(r.dk));
        t.accumulate(v, std::move(r.dv));
        t.accumulate(rel_bias, std::move(r.drel_bias));
      });
}

template <typename T>
Var<T> dina(Tape<T> &tape, const ParamStore<T> &store,
            const std::string &prefix, Var<T> x, const AttnGeometry &geom) {
  if (x.shape().size() != 4 || x.shape()[3] != geom.channels())
    throw ShapeError("dina: input " + shape_str(x.shape()) +
                     " has channels not equal to heads*head_dim = " +
                     std::to_string(geom.channels()));
  auto proj = [&](Var<T> in, const std::string &name) {
    std::optional<Var<T>> b;
    if (store.contains(prefix + "." + name + "_b"))
      b = tape.param(store, prefix + "." + name + "_b");
    return conv2d(in, tape.param(store, prefix + "." + name + "_w"), b, 1,
                  Padding::valid);
  };
  auto q = proj(x, "q");
  auto k = proj(x, "k");
  auto v = proj(x, "v");
  auto a = neighborhood_attention(q, k, v,
                                  tape.param(store, prefix + ".rel_bias"), geom);
  return proj(a, "out");
}

} // namespace ad

template <typename T>
Tensor<T> dina_forward(const Tensor<T> &x, const DinaParams<T> &p,
                       const AttnGeometry &geom) {
  if (x.rank() != 4 || x.dim(3) % geom.heads != 0)
    throw ShapeError("dina_forward: channels of " + shape_str(x.shape()) +
                     " not divisible by heads " + std::to_string(geom.heads));
  auto proj = [](const Tensor<T> &in, const Tensor<T> &w, const Tensor<T> &b) {
    return ops::conv2d(in, w, b, 1, ops::Padding::valid);
  };
  const auto q = proj(x, p.q_w, p.q_b);
  const auto k = proj(x, p.k_w, p.k_b);
  const auto v = proj(x, p.v_w, p.v_b);
  const auto a = neighborhood_attention(q, k, v, p.rel_bias, geom);
  return proj(a, p.out_w, p.out_b);
}

namespace {

// Neighborhood set along one axis, characterized as the k members of i's
// dilation class nearest to i.
std::vector<bool> nearest_class_members(std::size_t n, std::size_t i,
                                        std::size_t k, std::size_t dilation) {
  std::vector<std::size_t> cls;
  for (std::size_t j = i % dilation; j < n; j += dilation)
    cls.push_back(j);
  std::stable_sort(cls.begin(), cls.end(), [&](std::size_t a, std::size_t b) {
    const auto da = a > i ? a - i : i - a;
    const auto db = b > i ? b - i : i - b;
    return da < db;
  });
  std::vector<bool> in(n, false);
  for (std::size_t j = 0; j < k && j < cls.size(); ++j)
    in[cls[j]] = true;
  return in;
}

template <typename T>
Tensor<T> naive_pointwise(const Tensor<T> &x, const Tensor<T> &w,
                          const Tensor<T> &b) {
  const std::size_t C = x.dim(3), Co = w.dim(3);
  Shape s = x.shape();
  s[3] = Co;
  Tensor<T> y(s);
  const std::size_t pixels = x.numel() / C;
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t o = 0; o < Co; ++o) {
      T acc = b.empty() ? T(0) : b[o];
      for (std::size_t i = 0; i < C; ++i)
        acc += x[p * C + i] * w[i * Co + o];
      y[p * Co + o] = acc;
    }
  return y;
}

} // namespace

template <typename T>
Tensor<T> dense_masked_attention_oracle(const Tensor<T> &x,
                                        const DinaParams<T> &p,
                                        const AttnGeometry &geom) {
  geom.validate();
  const std::size_t n = x.dim(0), H = geom.height, W = geom.width;
  const std::size_t dk = geom.head_dim, tokens = H * W;
  const long tk = static_cast<long>((p.rel_bias.dim(1) + 1) / 2);
  const long tw = 2 * tk - 1;
  const long dil = static_cast<long>(geom.dilation);
  const auto q = naive_pointwise(x, p.q_w, p.q_b);
  const auto k = naive_pointwise(x, p.k_w, p.k_b);
  const auto v = naive_pointwise(x, p.v_w, p.v_b);
  Tensor<T> att(q.shape());
  const T ninf = -std::numeric_limits<T>::infinity();
  std::vector<T> row(tokens);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t h = 0; h < geom.heads; ++h)
      for (std::size_t i = 0; i < tokens; ++i) {
        const std::size_t ri = i / W, ci = i % W;
        const auto in_r = nearest_class_members(H, ri, geom.kernel, geom.dilation);
        const auto in_c = nearest_class_members(W, ci, geom.kernel, geom.dilation);
        for (std::size_t j = 0; j < tokens; ++j) {
          const std::size_t rj = j / W, cj = j % W;
          if (!in_r[rj] || !in_c[cj]) {
            row[j] = ninf;
            continue;
          }
          T s = 0;
          for (std::size_t d = 0; d < dk; ++d)
            s += q[(b * tokens + i) * geom.channels() + h * dk + d] *
                 k[(b * tokens + j) * geom.channels() + h * dk + d];
          const long dr = (static_cast<long>(rj) - static_cast<long>(ri)) / dil;
          const long dc = (static_cast<long>(cj) - static_cast<long>(ci)) / dil;
          s += p.rel_bias[(h * tw + dr + tk - 1) * tw + dc + tk - 1];
          row[j] = s / std::sqrt(static_cast<T>(dk));
        }
        T mx = ninf;
        for (auto r : row)
          mx = std::max(mx, r);
        T z = 0;
        for (auto &r : row) {
          r = r == ninf ? T(0) : std::exp(r - mx);
          z += r;
        }
        for (std::size_t d = 0; d < dk; ++d) {
          T acc = 0;
          for (std::size_t j = 0; j < tokens; ++j)
            acc += row[j] / z * v[(b * tokens + j) * geom.channels() + h * dk + d];
          att[(b * tokens + i) * geom.channels() + h * dk + d] = acc;
        }
      }
  return naive_pointwise(att, p.out_w, p.out_b);
}

#define DDNT_DINA_INSTANTIATE(T)                                               \
  template struct DinaParams<T>;                                               \
  template void register_dina_params(ParamStore<T> &, const std::string &,     \
                                     std::size_t, std::size_t, std::size_t,    \
                                     bool, Initializer &);                     \
  template Tensor<T> neighborhood_attention(                                   \
      const Tensor<T> &, const Tensor<T> &, const Tensor<T> &,                 \
      const Tensor<T> &, const AttnGeometry &, std::vector<T> *);              \
  template NeighborhoodAttentionGrads<T> neighborhood_attention_backward(      \
      const Tensor<T> &, const Tensor<T> &, const Tensor<T> &,                 \
      const Tensor<T> &, const AttnGeometry &, const std::vector<T> &,         \
      const Tensor<T> &);                                                      \
  template Var<T> ad::neighborhood_attention(Var<T>, Var<T>, Var<T>, Var<T>,   \
                                             const AttnGeometry &);            \
  template Var<T> ad::dina(Tape<T> &, const ParamStore<T> &,                   \
                           const std::string &, Var<T>, const AttnGeometry &); \
  template Tensor<T> dina_forward(const Tensor<T> &, const DinaParams<T> &,    \
                                  const AttnGeometry &);                       \
  template Tensor<T> dense_masked_attention_oracle(                            \
      const Tensor<T> &, const DinaParams<T> &, const AttnGeometry &);

DDNT_DINA_INSTANTIATE(float)
DDNT_DINA_INSTANTIATE(double)

} // namespace ddnt
