// SPDX-License-Identifier: Apache-2.0
#include "ddnt/ad_ops.hpp"
#include "ddnt/dina.hpp"
#include "ddnt/gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace ddnt;
using ddnt::testing::random_tensor;

namespace {

template <typename T>
DinaParams<T> random_params(std::size_t C, std::size_t heads, std::size_t k,
                            std::mt19937_64 &rng) {
  const std::size_t tw = 2 * k - 1;
  DinaParams<T> p;
  p.q_w = random_tensor<T>({1, 1, C, C}, rng);
  p.k_w = random_tensor<T>({1, 1, C, C}, rng);
  p.v_w = random_tensor<T>({1, 1, C, C}, rng);
  p.out_w = random_tensor<T>({1, 1, C, C}, rng);
  p.q_b = random_tensor<T>({C}, rng);
  p.k_b = random_tensor<T>({C}, rng);
  p.v_b = random_tensor<T>({C}, rng);
  p.out_b = random_tensor<T>({C}, rng);
  p.rel_bias = random_tensor<T>({heads, tw, tw}, rng);
  return p;
}

AttnGeometry geometry(std::size_t h, std::size_t w, std::size_t k,
                      std::size_t dil, std::size_t heads, std::size_t C) {
  return {h, w, k, dil, heads, C / heads};
}

// Unmasked dense self-attention with relative bias indexed by raw offsets.
Tensor<double> dense_attention(const Tensor<double> &x, const DinaParams<double> &p,
                               std::size_t heads) {
  const std::size_t H = x.dim(1), W = x.dim(2), C = x.dim(3), dk = C / heads;
  const long tk = long(p.rel_bias.dim(1) + 1) / 2, tw = 2 * tk - 1;
  auto proj = [&](const Tensor<double> &in, const Tensor<double> &w,
                  const Tensor<double> &b) {
    Tensor<double> y(in.shape());
    for (std::size_t t = 0; t < H * W; ++t)
      for (std::size_t o = 0; o < C; ++o) {
        double s = b[o];
        for (std::size_t i = 0; i < C; ++i)
          s += in[t * C + i] * w[i * C + o];
        y[t * C + o] = s;
      }
    return y;
  };
  auto q = proj(x, p.q_w, p.q_b), k = proj(x, p.k_w, p.k_b), v = proj(x, p.v_w, p.v_b);
  Tensor<double> a(x.shape());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < H * W; ++i) {
      std::vector<double> l(H * W);
      double mx = -1e300;
      for (std::size_t j = 0; j < H * W; ++j) {
        double s = 0;
        for (std::size_t d = 0; d < dk; ++d)
          s += q[i * C + h * dk + d] * k[j * C + h * dk + d];
        const long dr = long(j / W) - long(i / W), dc = long(j % W) - long(i % W);
        s += p.rel_bias[(h * tw + dr + tk - 1) * tw + dc + tk - 1];
        l[j] = s / std::sqrt(double(dk));
        mx = std::max(mx, l[j]);
      }
      double z = 0;
      for (auto &e : l)
        z += (e = std::exp(e - mx));
      for (std::size_t d = 0; d < dk; ++d) {
        double s = 0;
        for (std::size_t j = 0; j < H * W; ++j)
          s += l[j] / z * v[j * C + h * dk + d];
        a[i * C + h * dk + d] = s;
      }
    }
  return proj(a, p.out_w, p.out_b);
}

} // namespace

TEST_CASE("neighbor_indices examples") {
  CHECK(neighbor_indices(7, 3, 7, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(neighbor_indices(8, 0, 3, 1) == std::vector<std::size_t>{0, 1, 2});
  CHECK(neighbor_indices(12, 5, 3, 4) == std::vector<std::size_t>{1, 5, 9});
  CHECK(neighbor_indices(8, 7, 3, 1) == std::vector<std::size_t>{5, 6, 7});
  CHECK_THROWS_AS(neighbor_indices(5, 0, 3, 2), std::invalid_argument);
}

TEST_CASE("neighbor_indices: k nearest members of the dilation class") {
  for (std::size_t n = 3; n <= 16; ++n)
    for (std::size_t k : {1u, 3u, 5u})
      for (std::size_t d = 1; d * k <= n; ++d)
        for (std::size_t i = 0; i < n; ++i) {
          const auto nb = neighbor_indices(n, i, k, d);
          REQUIRE(nb.size() == k);
          std::set<std::size_t> chosen(nb.begin(), nb.end());
          CHECK(chosen.size() == k);
          CHECK(chosen.count(i) == 1);
          std::size_t worst_in = 0;
          for (auto j : nb) {
            CHECK(j % d == i % d);
            worst_in = std::max(worst_in, j > i ? j - i : i - j);
          }
          // No unchosen class member may be strictly closer than a chosen one.
          for (std::size_t j = i % d; j < n; j += d)
            if (!chosen.count(j))
              CHECK((j > i ? j - i : i - j) >= worst_in);
        }
}

TEST_CASE("dina_forward matches the dense masked oracle (float and double)") {
  std::mt19937_64 rng(42);
  for (std::size_t dil : {1u, 2u, 4u}) {
    auto p = random_params<double>(4, 2, 3, rng);
    auto x = random_tensor<double>({1, 12, 12, 4}, rng);
    const auto g = geometry(12, 12, 3, dil, 2, 4);
    auto y = dina_forward(x, p, g);
    auto o = dense_masked_attention_oracle(x, p, g);
    CHECK(max_abs_diff(y, o) <= 1e-10);

    DinaParams<float> pf{p.q_w.cast<float>(),   p.q_b.cast<float>(),
                         p.k_w.cast<float>(),   p.k_b.cast<float>(),
                         p.v_w.cast<float>(),   p.v_b.cast<float>(),
                         p.out_w.cast<float>(), p.out_b.cast<float>(),
                         p.rel_bias.cast<float>()};
    auto xf = x.cast<float>();
    CHECK(max_abs_diff(dina_forward(xf, pf, g), dense_masked_attention_oracle(xf, pf, g)) <=
          1e-5f);
  }
}

TEST_CASE("full window degenerates to dense attention with relative bias") {
  std::mt19937_64 rng(3);
  for (std::size_t k : {3u, 5u}) {
    auto p = random_params<double>(4, 2, k, rng);
    auto x = random_tensor<double>({1, k, k, 4}, rng);
    auto y = dina_forward(x, p, geometry(k, k, k, 1, 2, 4));
    CHECK(max_abs_diff(y, dense_attention(x, p, 2)) <= 1e-10);
  }
}

TEST_CASE("zero key projection gives uniform attention over the neighborhood") {
  std::mt19937_64 rng(5);
  auto p = random_params<double>(2, 1, 3, rng);
  p.k_w.fill(0);
  p.k_b.fill(0);
  p.rel_bias.fill(0);
  auto x = random_tensor<double>({1, 6, 6, 2}, rng);
  const auto g = geometry(6, 6, 3, 2, 1, 2);
  auto y = dina_forward(x, p, g);
  auto v = ops::conv2d(x, p.v_w, p.v_b, 1, ops::Padding::valid);
  Tensor<double> mean(x.shape());
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c)
      for (auto rr : neighbor_indices(6, r, 3, 2))
        for (auto cc : neighbor_indices(6, c, 3, 2))
          for (std::size_t ch = 0; ch < 2; ++ch)
            mean.at(0, r, c, ch) += v.at(0, rr, cc, ch) / 9.0;
  auto expect = ops::conv2d(mean, p.out_w, p.out_b, 1, ops::Padding::valid);
  CHECK(max_abs_diff(y, expect) <= 1e-12);
}

TEST_CASE("single-token grid reduces to out_proj(v_proj(x))") {
  std::mt19937_64 rng(6);
  auto p = random_params<double>(4, 2, 1, rng);
  auto x = random_tensor<double>({2, 1, 1, 4}, rng);
  const auto g = geometry(1, 1, 1, 1, 2, 4);
  auto expect = ops::conv2d(ops::conv2d(x, p.v_w, p.v_b, 1, ops::Padding::valid),
                            p.out_w, p.out_b, 1, ops::Padding::valid);
  CHECK(max_abs_diff(dina_forward(x, p, g), expect) <= 1e-12);
  CHECK(max_abs_diff(dense_masked_attention_oracle(x, p, g), expect) <= 1e-12);
}

TEST_CASE("per-token loop cross-check on a 4x4 grid") {
  std::mt19937_64 rng(8);
  auto p = random_params<double>(2, 1, 3, rng);
  auto x = random_tensor<double>({1, 4, 4, 2}, rng);
  const auto g = geometry(4, 4, 3, 1, 1, 2);
  auto q = ops::conv2d(x, p.q_w, p.q_b, 1, ops::Padding::valid);
  auto k = ops::conv2d(x, p.k_w, p.k_b, 1, ops::Padding::valid);
  auto v = ops::conv2d(x, p.v_w, p.v_b, 1, ops::Padding::valid);
  Tensor<double> a(x.shape());
  for (long r = 0; r < 4; ++r)
    for (long c = 0; c < 4; ++c) {
      // Clamped 3-window on a 4-axis: start = clamp(i-1, 0, 1).
      const long r0 = std::clamp(r - 1, 0L, 1L), c0 = std::clamp(c - 1, 0L, 1L);
      double w[9], z = 0;
      for (int t = 0; t < 9; ++t) {
        const long rr = r0 + t / 3, cc = c0 + t % 3;
        double s = q.at(0, r, c, 0) * k.at(0, rr, cc, 0) +
                   q.at(0, r, c, 1) * k.at(0, rr, cc, 1);
        s += p.rel_bias[(rr - r + 2) * 5 + (cc - c + 2)];
        w[t] = std::exp(s / std::sqrt(2.0));
        z += w[t];
      }
      for (int t = 0; t < 9; ++t)
        for (int ch = 0; ch < 2; ++ch)
          a.at(0, r, c, ch) += w[t] / z * v.at(0, r0 + t / 3, c0 + t % 3, ch);
    }
  auto expect = ops::conv2d(a, p.out_w, p.out_b, 1, ops::Padding::valid);
  CHECK(max_abs_diff(dina_forward(x, p, g), expect) <= 1e-12);
  CHECK(max_abs_diff(dense_masked_attention_oracle(x, p, g), expect) <= 1e-12);
}

TEST_CASE("attention rows sum to one and heads are independent") {
  std::mt19937_64 rng(9);
  const auto g = geometry(8, 8, 3, 2, 2, 4);
  auto q = random_tensor<double>({1, 8, 8, 4}, rng);
  auto k = random_tensor<double>({1, 8, 8, 4}, rng);
  auto v = random_tensor<double>({1, 8, 8, 4}, rng);
  auto b = random_tensor<double>({2, 5, 5}, rng);
  std::vector<double> probs;
  auto y = neighborhood_attention(q, k, v, b, g, &probs);
  for (std::size_t row = 0; row < probs.size() / 9; ++row) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j)
      s += probs[row * 9 + j];
    CHECK(std::abs(s - 1) <= 1e-12);
  }
  auto swap_heads = [](const Tensor<double> &t) {
    Tensor<double> s(t.shape());
    for (std::size_t i = 0; i < t.numel(); i += 4) {
      s[i] = t[i + 2];
      s[i + 1] = t[i + 3];
      s[i + 2] = t[i];
      s[i + 3] = t[i + 1];
    }
    return s;
  };
  Tensor<double> bs(b.shape());
  std::copy_n(b.data(), 25, bs.data() + 25);
  std::copy_n(b.data() + 25, 25, bs.data());
  auto ys = neighborhood_attention(swap_heads(q), swap_heads(k), swap_heads(v), bs, g);
  CHECK(max_abs_diff(ys, swap_heads(y)) == 0.0);
}

TEST_CASE("geometry validation") {
  AttnGeometry g = geometry(6, 6, 3, 3, 1, 2);
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = geometry(6, 6, 4, 1, 1, 2);
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  std::mt19937_64 rng(1);
  auto p = random_params<float>(4, 2, 3, rng);
  auto x = random_tensor<float>({1, 6, 6, 3}, rng);
  CHECK_THROWS(dina_forward(x, p, geometry(6, 6, 3, 1, 2, 4)));
}

TEST_CASE("dina gradient check over input and every parameter") {
  std::mt19937_64 rng(10);
  for (std::size_t dil : {1u, 2u}) {
    ParamStore<double> ps;
    Initializer init(dil);
    register_dina_params(ps, "attn", 4, 2, 3, true, init);
    for (auto &e : ps.entries())
      e.value = random_tensor<double>(e.value.shape(), rng, -0.5, 0.5);
    ps.add("x", random_tensor<double>({1, 6, 7, 4}, rng));
    auto probe = random_tensor<double>({1, 6, 7, 4}, rng);
    const auto g = geometry(6, 7, 3, dil, 2, 4);
    auto r = grad_check(
        [&](Tape<double> &t, const ParamStore<double> &s) {
          return ad::weighted_sum(ad::dina(t, s, "attn", t.param(s, "x"), g), probe);
        },
        ps);
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
}
