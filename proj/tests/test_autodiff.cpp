// SPDX-License-Identifier: Apache-2.0
#include "ddnt/ad_ops.hpp"
#include "ddnt/gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace ddnt;
using ddnt::testing::random_tensor;

namespace {

// Probe loss: sum(f(x) * R) for a fixed random R, so every output coordinate
// contributes with a distinct weight.
template <typename Fn>
GradCheckReport check_unary(Fn fn, Shape in, std::uint64_t seed = 1,
                            double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor<double>(std::move(in), rng, lo, hi);
  Tensor<double> probe;
  {
    Tape<double> t;
    probe = random_tensor<double>(fn(t.constant(x)).shape(), rng);
  }
  return grad_check(
      [&](Tape<double> &, Var<double> v) {
        return ad::weighted_sum(fn(v), probe);
      },
      x, 1e-4);
}

GradCheckReport check_multi(
    const std::function<Var<double>(const std::vector<Var<double>> &)> &fn,
    std::vector<NamedInput> inputs, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Tensor<double> probe;
  {
    Tape<double> t;
    std::vector<Var<double>> vs;
    for (auto &in : inputs)
      vs.push_back(t.constant(in.value));
    probe = random_tensor<double>(fn(vs).shape(), rng);
  }
  return grad_check(
      [&](Tape<double> &, const std::vector<Var<double>> &v) {
        return ad::weighted_sum(fn(v), probe);
      },
      std::move(inputs));
}

} // namespace

TEST_CASE("backward of sum is all ones") {
  Tape<float> t;
  ParamStore<float> ps;
  ps.add("p", Tensor<float>({2, 3}, 0.7f));
  auto p = t.param(ps, "p");
  auto g = t.backward(ad::sum(p));
  CHECK(g.at("p") == Tensor<float>({2, 3}, 1.0f));
}

TEST_CASE("backward of sum(p*p) is 2p, accumulated over both uses") {
  std::mt19937_64 rng(1);
  ParamStore<double> ps;
  ps.add("p", random_tensor<double>({4, 2}, rng));
  Tape<double> t;
  auto p = t.param(ps, "p");
  auto g = t.backward(ad::sum(ad::mul(p, p)));
  CHECK(max_abs_diff(g.at("p"), ops::scale(ps.at("p"), 2.0)) == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape<float> t;
  auto x = t.variable(Tensor<float>({2}));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("parameters without requires_grad are not reported") {
  ParamStore<double> ps;
  ps.add("frozen", Tensor<double>({2}, 1.0), false);
  ps.add("live", Tensor<double>({2}, 1.0));
  Tape<double> t;
  auto loss = ad::sum(ad::mul(t.param(ps, "frozen"), t.param(ps, "live")));
  auto g = t.backward(loss);
  CHECK(g.count("frozen") == 0);
  CHECK(g.count("live") == 1);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  std::mt19937_64 rng(2);
  ParamStore<double> ps;
  ps.add("x", random_tensor<double>({1, 4, 4, 2}, rng));
  ps.add("w", random_tensor<double>({3, 3, 2, 2}, rng));
  auto l1 = [&](Tape<double> &t) {
    return ad::sum(ad::gelu(ad::conv2d(t.param(ps, "x"), t.param(ps, "w"),
                                       std::nullopt, 1, ad::Padding::same)));
  };
  auto l2 = [&](Tape<double> &t) {
    return ad::sum(ad::mul(t.param(ps, "x"), t.param(ps, "x")));
  };
  Tape<double> ta, tb, tc;
  auto ga = ta.backward(l1(ta));
  auto gb = tb.backward(l2(tb));
  auto gc = tc.backward(ad::add(l1(tc), l2(tc)));
  CHECK(max_abs_diff(gc.at("x"), ops::add(ga.at("x"), gb.at("x"))) <= 1e-12);
  CHECK(max_abs_diff(gc.at("w"), ga.at("w")) <= 1e-12);
}

TEST_CASE("finite-difference checks of primitive ops") {
  using ad::Padding;
  SUBCASE("conv2d, all inputs, same and strided") {
    for (std::size_t stride : {1u, 2u}) {
      std::mt19937_64 rng(stride);
      auto r = check_multi(
          [&](const std::vector<Var<double>> &v) {
            return ad::conv2d(v[0], v[1], v[2], stride, Padding::same);
          },
          {{"x", random_tensor<double>({1, 5, 6, 3}, rng)},
           {"w", random_tensor<double>({3, 3, 3, 2}, rng)},
           {"b", random_tensor<double>({2}, rng)}});
      CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
    }
  }
  SUBCASE("depthwise conv2d") {
    std::mt19937_64 rng(3);
    auto r = check_multi(
        [&](const std::vector<Var<double>> &v) {
          return ad::depthwise_conv2d(v[0], v[1], v[2], 1, Padding::same);
        },
        {{"x", random_tensor<double>({2, 4, 5, 3}, rng)},
         {"w", random_tensor<double>({3, 3, 3}, rng)},
         {"b", random_tensor<double>({3}, rng)}});
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
  SUBCASE("transposed conv") {
    std::mt19937_64 rng(4);
    auto r = check_multi(
        [&](const std::vector<Var<double>> &v) {
          return ad::conv_transpose2d(v[0], v[1], v[2], 2);
        },
        {{"x", random_tensor<double>({1, 3, 3, 4}, rng)},
         {"w", random_tensor<double>({2, 2, 4, 2}, rng)},
         {"b", random_tensor<double>({2}, rng)}});
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
  SUBCASE("conv1d along channels") {
    std::mt19937_64 rng(5);
    auto r = check_multi(
        [&](const std::vector<Var<double>> &v) {
          return ad::conv1d_channels(v[0], v[1]);
        },
        {{"x", random_tensor<double>({2, 1, 1, 6}, rng)},
         {"w", random_tensor<double>({3}, rng)}});
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
  SUBCASE("layer_norm") {
    std::mt19937_64 rng(6);
    auto r = check_multi(
        [&](const std::vector<Var<double>> &v) {
          return ad::layer_norm(v[0], v[1], v[2], 1e-5);
        },
        {{"x", random_tensor<double>({1, 4, 4, 4}, rng)},
         {"gamma", random_tensor<double>({4}, rng)},
         {"beta", random_tensor<double>({4}, rng)}});
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
  SUBCASE("softmax path") {
    auto r = check_unary([](Var<double> x) { return ad::softmax_lastdim(x); },
                         {3, 7}, 7, -3, 3);
    CHECK_MESSAGE(r.passed, r.max_rel_error);
  }
  SUBCASE("pointwise activations") {
    CHECK(check_unary([](Var<double> x) { return ad::gelu(x); }, {1, 3, 3, 2}).passed);
    CHECK(check_unary([](Var<double> x) { return ad::sigmoid(x); }, {1, 3, 3, 2}).passed);
    // Keep samples away from the kink at zero.
    CHECK(check_unary([](Var<double> x) { return ad::leaky_relu(x, 0.2); },
                      {1, 3, 3, 2}, 8, 0.1, 1.0)
              .passed);
    CHECK(check_unary([](Var<double> x) { return ad::leaky_relu(x, 0.2); },
                      {1, 3, 3, 2}, 9, -1.0, -0.1)
              .passed);
  }
  SUBCASE("pooling, resize, padding") {
    CHECK(check_unary([](Var<double> x) { return ad::global_avg_pool(x); },
                      {2, 3, 4, 3})
              .passed);
    for (auto s : {ad::Scale::up2, ad::Scale::up4, ad::Scale::down2})
      CHECK(check_unary([s](Var<double> x) { return ad::resize(x, s); },
                        {1, 4, 4, 2})
                .passed);
    CHECK(check_unary([](Var<double> x) {
            return ad::crop(ad::reflect_pad(x, 3, 2), 5, 4);
          },
                      {1, 4, 5, 2})
              .passed);
  }
  SUBCASE("broadcast multiply, concat and slice") {
    std::mt19937_64 rng(10);
    auto r = check_multi(
        [&](const std::vector<Var<double>> &v) {
          auto m = ad::mul(v[0], v[1]);
          auto cat = ad::concat_channels<double>({m, v[0]});
          auto [a, b] = ad::split_channels_half(cat);
          return ad::add(ad::mul(a, b), ad::slice_channels(cat, 2, 4));
        },
        {{"x", random_tensor<double>({2, 3, 3, 4}, rng)},
         {"g", random_tensor<double>({2, 1, 1, 4}, rng)}});
    CHECK_MESSAGE(r.passed, r.worst_input, " ", r.max_rel_error);
  }
  SUBCASE("losses away from zero residual") {
    std::mt19937_64 rng(11);
    auto target = random_tensor<double>({1, 3, 3, 3}, rng);
    auto pred = target;
    for (std::size_t i = 0; i < pred.numel(); ++i)
      pred[i] += (i % 2 ? 0.3 : -0.4);
    auto r = grad_check(
        [&](Tape<double> &t, Var<double> p) {
          return ad::l1_loss(p, t.constant(target));
        },
        pred, 1e-4);
    CHECK(r.passed);
    auto rc = grad_check(
        [&](Tape<double> &t, Var<double> p) {
          return ad::charbonnier_loss(p, t.constant(target), 1e-3);
        },
        random_tensor<double>({1, 3, 3, 3}, rng), 1e-4);
    CHECK(rc.passed);
  }
}

TEST_CASE("grad_check reports the coordinate of a non-finite value") {
  auto r = grad_check(
      [](Tape<double> &t, Var<double> x) {
        // log-like blow-up: 1/x evaluated at x = 0 in coordinate 2.
        Tensor<double> v = x.value();
        for (auto &e : v.vec())
          e = 1.0 / e;
        return ad::sum(t.record(v, {x}, [x](Tape<double> &tp, const Tensor<double> &g) {
          tp.accumulate(x, Tensor<double>(tp.value(x).shape(), g[0]));
        }));
      },
      Tensor<double>({3}, std::vector<double>{1, 2, 0}), 1e-4);
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.failure.empty());
}
