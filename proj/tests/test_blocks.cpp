// SPDX-License-Identifier: Apache-2.0
#include "ddnt/blocks.hpp"
#include "ddnt/gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace ddnt;
using ddnt::testing::random_tensor;
using ddnt::testing::randomize;
using ddnt::testing::zero_all;

namespace {

template <typename T> T logit(T g) { return std::log(g / (T(1) - g)); }

// Zero-padded width-3 correlation over a channel sequence, written as a loop.
std::vector<double> conv1d_loop(const std::vector<double> &s,
                                const std::vector<double> &w) {
  std::vector<double> out(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const long src = static_cast<long>(i) + static_cast<long>(j) - 1;
      if (src >= 0 && src < static_cast<long>(s.size()))
        out[i] += w[j] * s[static_cast<std::size_t>(src)];
    }
  return out;
}

template <typename T>
ParamStore<T> block_store(std::size_t c, std::size_t heads, std::size_t k,
                          bool use_bias, std::uint64_t seed) {
  ParamStore<T> s;
  Initializer init(seed);
  register_transformer_block(s, "b", c, heads, k, use_bias, init);
  return s;
}

// Expand -> depthwise -> split -> product, from tensor-core kernels.
template <typename T>
Tensor<T> ffn_oracle(const Tensor<T> &x, const ParamStore<T> &s,
                     const std::string &p, bool gelu_gate) {
  auto opt = [&](const std::string &n) {
    return s.contains(n) ? s.at(n) : Tensor<T>();
  };
  auto h = ops::conv2d(x, s.at(p + ".pw_w"), opt(p + ".pw_b"), 1,
                       ops::Padding::valid);
  h = ops::depthwise_conv2d(h, s.at(p + ".dw_w"), opt(p + ".dw_b"), 1,
                            ops::Padding::same);
  auto [x1, x2] = ops::split_channels_half(h);
  return ops::mul(x1, gelu_gate ? ops::gelu(x2) : x2);
}

} // namespace

TEST_CASE("lccl gate examples") {
  std::mt19937_64 rng(1);
  auto x = random_tensor<double>({2, 3, 4, 5}, rng, -3, 3);
  SUBCASE("zero weights give 0.5 everywhere") {
    auto g = lccl_forward(x, Tensor<double>({3}));
    CHECK(g.shape() == Shape{2, 1, 1, 5});
    for (auto v : g.vec())
      CHECK(v == 0.5);
  }
  SUBCASE("constant input with a centre tap gives sigmoid(c)") {
    Tensor<double> c({1, 3, 3, 4}, 0.8);
    auto g = lccl_forward(c, Tensor<double>({3}, std::vector<double>{0, 1, 0}));
    for (auto v : g.vec())
      CHECK(v == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))).epsilon(1e-12));
  }
  SUBCASE("channel means 1..4 with ones kernel") {
    Tensor<double> m({1, 2, 2, 4});
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w)
        for (std::size_t c = 0; c < 4; ++c)
          m.at(0, h, w, c) = double(c + 1) + (h == w ? 0.5 : -0.5);
    std::vector<double> ones{1, 1, 1};
    auto expect = conv1d_loop({1, 2, 3, 4}, ones);
    CHECK(expect == std::vector<double>{3, 6, 9, 7});
    auto g = lccl_forward(m, Tensor<double>({3}, ones));
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(logit(g[c]) == doctest::Approx(expect[c]).epsilon(1e-9));
  }
  SUBCASE("gate values lie strictly inside (0, 1)") {
    for (int trial = 0; trial < 20; ++trial) {
      auto xi = random_tensor<float>({1, 2, 2, 6}, rng, -2, 2);
      auto w = random_tensor<float>({3}, rng, -3, 3);
      const auto g = lccl_forward(xi, w);
      for (auto v : g.vec()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
      }
    }
  }
}

TEST_CASE("casa is the product of its two branches") {
  std::mt19937_64 rng(2);
  auto s = block_store<double>(4, 2, 3, true, 5);
  randomize(s, rng);
  auto geom = block_geometry(6, 6, 4, 2, 3, DilationTag::global);
  auto dp = DinaParams<double>::from_store(s, "b.casa.dina");
  auto x = random_tensor<double>({2, 6, 6, 4}, rng);
  const auto attn = dina_forward(x, dp, geom);

  SUBCASE("zero lccl weights halve the attention output") {
    s.at("b.casa.lccl_w").fill(0.0);
    auto y = casa_forward(x, s, "b.casa", geom);
    CHECK(max_abs_diff(y, ops::scale(attn, 0.5)) <= 1e-12);
  }
  SUBCASE("saturated gate passes attention through") {
    auto xp = random_tensor<double>({1, 6, 6, 4}, rng, 0.5, 1.0);
    s.at("b.casa.lccl_w") = Tensor<double>({3}, std::vector<double>{0, 60, 0});
    auto y = casa_forward(xp, s, "b.casa", geom);
    auto a = dina_forward(xp, dp, geom);
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(std::abs(y[i] - a[i]) <= 1e-3 * std::abs(a[i]) + 1e-12);
  }
  SUBCASE("random case matches independent composition") {
    auto gate = lccl_forward(x, s.at("b.casa.lccl_w"));
    auto y = casa_forward(x, s, "b.casa", geom);
    CHECK(max_abs_diff(y, ops::mul(attn, gate)) <= 1e-12);
  }
}

TEST_CASE("dmfn examples and homogeneity") {
  std::mt19937_64 rng(3);
  ParamStore<double> s;
  Initializer init(7);
  register_ffn(s, "f", 4, true, init);
  randomize(s, rng);
  auto x = random_tensor<double>({2, 5, 4, 4}, rng);

  SUBCASE("zero weights give zero output") {
    zero_all(s);
    auto y = dmfn_forward(x, s, "f");
    CHECK(y.shape() == x.shape());
    CHECK(max_abs_diff(y, Tensor<double>(x.shape())) == 0.0);
  }
  SUBCASE("matches composition of tensor-core kernels") {
    CHECK(max_abs_diff(dmfn_forward(x, s, "f"), ffn_oracle(x, s, "f", false)) <=
          1e-12);
    auto sf = s.cast<float>();
    auto xf = x.cast<float>();
    CHECK(max_abs_diff(dmfn_forward(xf, sf, "f"),
                       ffn_oracle(xf, sf, "f", false)) <= 1e-6f);
  }
  SUBCASE("degree-2 homogeneity without biases") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ParamStore<float> nb;
      Initializer in(seed);
      register_ffn(nb, "f", 6, false, in);
      randomize(nb, rng);
      auto xf = random_tensor<float>({1, 4, 4, 6}, rng);
      const auto base = dmfn_forward(xf, nb, "f");
      for (float a : {0.5f, 2.0f}) {
        auto ya = dmfn_forward(ops::scale(xf, a), nb, "f");
        CHECK(max_abs_diff(ya, ops::scale(base, a * a)) <= 1e-6f * a * a);
      }
    }
  }
}

TEST_CASE("gdfn examples") {
  std::mt19937_64 rng(4);
  ParamStore<double> s;
  Initializer init(8);
  register_ffn(s, "f", 3, true, init);
  randomize(s, rng);
  auto x = random_tensor<double>({1, 4, 5, 3}, rng);

  SUBCASE("zero gate branch gives zero output") {
    auto &w = s.at("f.pw_w"); // [1,1,3,6]; channels 3..5 feed X2
    for (std::size_t ci = 0; ci < 3; ++ci)
      for (std::size_t co = 3; co < 6; ++co)
        w[ci * 6 + co] = 0.0;
    for (std::size_t co = 3; co < 6; ++co) {
      s.at("f.pw_b")[co] = 0.0;
      s.at("f.dw_b")[co] = 0.0;
    }
    auto y = gdfn_forward(x, s, "f");
    for (auto v : y.vec())
      CHECK(v == 0.0);
  }
  SUBCASE("identity gate reduces to dmfn") {
    CHECK(gdfn_forward(x, s, "f", true) == dmfn_forward(x, s, "f"));
  }
  SUBCASE("matches composition with exact GELU") {
    CHECK(max_abs_diff(gdfn_forward(x, s, "f"), ffn_oracle(x, s, "f", true)) <=
          1e-12);
  }
  SUBCASE("large positive gate input makes gdfn approach dmfn") {
    for (std::size_t co = 3; co < 6; ++co)
      s.at("f.dw_b")[co] = 12.0;
    auto g = gdfn_forward(x, s, "f");
    auto d = dmfn_forward(x, s, "f");
    for (std::size_t i = 0; i < g.numel(); ++i)
      CHECK(std::abs(g[i] - d[i]) <= 1e-3 * std::abs(d[i]) + 1e-12);
  }
}

TEST_CASE("transformer block") {
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>({1, 6, 7, 4}, rng);

  SUBCASE("zeroed branches make the block the identity") {
    auto s = block_store<double>(4, 2, 3, true, 1);
    zero_all(s);
    auto geom = block_geometry(6, 7, 4, 2, 3, DilationTag::global);
    CHECK(transformer_block_forward(x, s, "b", geom) == x);
  }
  SUBCASE("local and global tags differ only in dilation") {
    auto l = block_geometry(21, 15, 8, 2, 7, DilationTag::local);
    auto g = block_geometry(21, 15, 8, 2, 7, DilationTag::global);
    CHECK(l.dilation == 1);
    CHECK(g.dilation == 2);
    CHECK(l.kernel == g.kernel);
    CHECK(l.heads == g.heads);
    CHECK(l.head_dim == g.head_dim);
    CHECK(global_dilation(256, 256, 7) == 36);
    CHECK(global_dilation(128, 128, 7) == 18);
    CHECK(global_dilation(64, 64, 7) == 9);
    CHECK(global_dilation(5, 9, 7) == 1);
  }
  SUBCASE("neighborhood shrinks on grids smaller than the kernel") {
    auto g = block_geometry(4, 6, 4, 1, 7, DilationTag::global);
    CHECK(g.kernel == 3);
    CHECK(g.dilation == 1);
  }
  SUBCASE("output equals the two residual steps composed by hand") {
    auto s = block_store<double>(4, 2, 3, true, 2);
    randomize(s, rng);
    auto geom = block_geometry(6, 7, 4, 2, 3, DilationTag::local);
    auto ln = [&](const Tensor<double> &v, const std::string &p) {
      return ops::layer_norm(v, s.at(p + ".gamma"), s.at(p + ".beta"),
                             kLayerNormEps);
    };
    auto y = ops::add(x, casa_forward(ln(x, "b.norm1"), s, "b.casa", geom));
    auto z = ops::add(y, ffn_oracle(ln(y, "b.norm2"), s, "b.ffn", false));
    CHECK(max_abs_diff(transformer_block_forward(x, s, "b", geom), z) <= 1e-12);
  }
  SUBCASE("gradient check at 64-bit") {
    for (auto tag : {DilationTag::local, DilationTag::global})
      for (auto kind : {FfnKind::dmfn, FfnKind::gdfn}) {
        auto s = block_store<double>(4, 2, 3, true, 3);
        randomize(s, rng);
        s.add("x", x);
        auto geom = block_geometry(6, 7, 4, 2, 3, tag);
        auto probe = random_tensor<double>(x.shape(), rng);
        BlockOptions opt;
        opt.ffn = kind;
        auto r = grad_check(
            [&](Tape<double> &t, const ParamStore<double> &ps) {
              return ad::weighted_sum(
                  ad::transformer_block(t, ps, "b", t.param(ps, "x"), geom,
                                        opt),
                  probe);
            },
            s);
        CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
      }
  }
}

TEST_CASE("residual block") {
  std::mt19937_64 rng(6);
  ParamStore<double> s;
  Initializer init(3);
  register_residual_block(s, "r", 3, init);
  auto x = random_tensor<double>({2, 5, 6, 3}, rng);

  SUBCASE("zero convolutions give the identity") {
    zero_all(s);
    CHECK(residual_block_forward(x, s, "r", 0.2) == x);
  }
  SUBCASE("slope 1 makes the block affine") {
    randomize(s, rng);
    auto y = random_tensor<double>(x.shape(), rng);
    const double a = 0.3;
    auto mix = ops::add(ops::scale(x, a), ops::scale(y, 1 - a));
    auto lhs = residual_block_forward(mix, s, "r", 1.0);
    auto rhs = ops::add(ops::scale(residual_block_forward(x, s, "r", 1.0), a),
                        ops::scale(residual_block_forward(y, s, "r", 1.0), 1 - a));
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
  }
  SUBCASE("gradient check") {
    randomize(s, rng);
    s.add("x", x);
    auto probe = random_tensor<double>(x.shape(), rng);
    auto r = grad_check(
        [&](Tape<double> &t, const ParamStore<double> &ps) {
          return ad::weighted_sum(
              ad::residual_block(t, ps, "r", t.param(ps, "x"), 0.2), probe);
        },
        s);
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
}
