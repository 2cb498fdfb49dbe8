// SPDX-License-Identifier: Apache-2.0
#include "ddnt/suites.hpp"

#include "ddnt/ad_ops.hpp"
#include "ddnt/blocks.hpp"
#include "ddnt/fusion.hpp"
#include "ddnt/gradcheck.hpp"
#include "ddnt/metrics.hpp"
#include "ddnt/model.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

namespace ddnt {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
Tensor<T> uniform(Shape shape, std::mt19937_64 &rng, double lo = -1.0,
                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto &v : t.vec())
    v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
void randomize(ParamStore<T> &s, std::mt19937_64 &rng, double lo = -0.5,
               double hi = 0.5) {
  for (auto &e : s.entries())
    e.value = uniform<T>(e.value.shape(), rng, lo, hi);
}

std::string fmt(const char *f, double a, double b = 0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

CheckResult bound_check(std::string name, double value, double limit,
                        Clock::time_point t0, const char *what = "max err") {
  CheckResult r;
  r.name = std::move(name);
  r.passed = std::isfinite(value) && value <= limit;
  r.detail = std::string(what) + " " + fmt("%.3g <= %.3g", value, limit);
  r.seconds = since(t0);
  return r;
}

CheckResult flag_check(std::string name, bool ok, std::string detail,
                       Clock::time_point t0) {
  return {std::move(name), ok, std::move(detail), since(t0)};
}

template <typename T>
DinaParams<T> random_dina(std::size_t C, std::size_t heads, std::size_t k,
                          std::mt19937_64 &rng) {
  const std::size_t tw = 2 * k - 1;
  DinaParams<T> p;
  for (auto *w : {&p.q_w, &p.k_w, &p.v_w, &p.out_w})
    *w = uniform<T>({1, 1, C, C}, rng);
  for (auto *b : {&p.q_b, &p.k_b, &p.v_b, &p.out_b})
    *b = uniform<T>({C}, rng);
  p.rel_bias = uniform<T>({heads, tw, tw}, rng);
  return p;
}

DinaParams<float> to_float(const DinaParams<double> &p) {
  return {p.q_w.cast<float>(), p.q_b.cast<float>(),   p.k_w.cast<float>(),
          p.k_b.cast<float>(), p.v_w.cast<float>(),   p.v_b.cast<float>(),
          p.out_w.cast<float>(), p.out_b.cast<float>(), p.rel_bias.cast<float>()};
}

// ----------------------------------------------------------- gradient checks

using StoreFn =
    std::function<Var<double>(Tape<double> &, const ParamStore<double> &)>;

CheckResult report(std::string name, const GradCheckReport &r, double tol,
                   Clock::time_point t0) {
  CheckResult c;
  c.name = std::move(name);
  c.passed = r.passed;
  c.detail = r.failure.empty()
                 ? fmt("max rel %.3g <= %.3g", r.max_rel_error, tol) + " (" +
                       std::to_string(r.checked) + " coords, worst " +
                       r.worst_input + ")"
                 : r.failure;
  c.seconds = since(t0);
  return c;
}

// Checks d(probe . f)/d(every store entry) for a random probe.
CheckResult check_store(std::string name, const StoreFn &f,
                        ParamStore<double> &s, std::mt19937_64 &rng,
                        const GradCheckOptions &opt) {
  const auto t0 = Clock::now();
  Tensor<double> probe;
  {
    Tape<double> t(false);
    probe = uniform<double>(f(t, s).shape(), rng);
  }
  const auto r = grad_check(
      [&](Tape<double> &t, const ParamStore<double> &ps) {
        return ad::weighted_sum(f(t, ps), probe);
      },
      s, opt);
  return report(std::move(name), r, opt.tol, t0);
}

ParamStore<double> block_store(std::size_t C, std::size_t heads,
                               std::size_t k, std::mt19937_64 &rng) {
  ParamStore<double> s;
  Initializer init(rng());
  register_transformer_block(s, "b", C, heads, k, true, init);
  randomize(s, rng);
  return s;
}

ParamStore<double> ldff_params(std::size_t cin, std::size_t cout, CfmMode mode,
                               std::mt19937_64 &rng) {
  ParamStore<double> s;
  Initializer init(rng());
  register_ldff(s, "l", cin, cout, mode, true, init);
  randomize(s, rng);
  return s;
}

} // namespace

bool all_passed(const CheckTable &table) {
  return std::all_of(table.begin(), table.end(),
                     [](const CheckResult &r) { return r.passed; });
}

std::string format_table(const CheckTable &table) {
  std::size_t width = 4;
  for (const auto &r : table)
    width = std::max(width, r.name.size());
  std::ostringstream os;
  for (const auto &r : table) {
    os << (r.passed ? "PASS  " : "FAIL  ") << r.name
       << std::string(width - r.name.size() + 2, ' ') << r.detail
       << fmt("  [%.2fs]", r.seconds) << "\n";
  }
  return os.str();
}

Tensor<double> dense_attention_reference(const Tensor<double> &x,
                                         const DinaParams<double> &p,
                                         std::size_t heads) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t dk = C / heads, T = H * W;
  const long tk = static_cast<long>(p.rel_bias.dim(1) + 1) / 2;
  const long tw = 2 * tk - 1;
  const auto proj = [&](const Tensor<double> &in, const Tensor<double> &w,
                        const Tensor<double> &b) {
    Tensor<double> y(in.shape());
    for (std::size_t t = 0; t < N * T; ++t)
      for (std::size_t o = 0; o < C; ++o) {
        double s = b.empty() ? 0.0 : b[o];
        for (std::size_t i = 0; i < C; ++i)
          s += in[t * C + i] * w[i * C + o];
        y[t * C + o] = s;
      }
    return y;
  };
  const auto q = proj(x, p.q_w, p.q_b), k = proj(x, p.k_w, p.k_b),
             v = proj(x, p.v_w, p.v_b);
  Tensor<double> a(x.shape());
  std::vector<double> l(T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < T; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0;
          for (std::size_t d = 0; d < dk; ++d)
            s += q[(n * T + i) * C + h * dk + d] * k[(n * T + j) * C + h * dk + d];
          const long dr = static_cast<long>(j / W) - static_cast<long>(i / W);
          const long dc = static_cast<long>(j % W) - static_cast<long>(i % W);
          s += p.rel_bias[static_cast<std::size_t>(
              (static_cast<long>(h) * tw + dr + tk - 1) * tw + dc + tk - 1)];
          l[j] = s / std::sqrt(static_cast<double>(dk));
          mx = std::max(mx, l[j]);
        }
        double z = 0;
        for (auto &e : l)
          z += (e = std::exp(e - mx));
        for (std::size_t d = 0; d < dk; ++d) {
          double s = 0;
          for (std::size_t j = 0; j < T; ++j)
            s += l[j] / z * v[(n * T + j) * C + h * dk + d];
          a[(n * T + i) * C + h * dk + d] = s;
        }
      }
  return proj(a, p.out_w, p.out_b);
}

OracleSweep dina_oracle_sweep(std::uint64_t seed, std::size_t cases) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  const auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  OracleSweep out;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t nh = pick(6, 16), nw = pick(6, 16);
    const std::size_t k = pick(0, 1) ? 5 : 3;
    const std::size_t n = std::min(nh, nw);
    std::vector<std::size_t> dils{1};
    if (2 * k <= n)
      dils.push_back(2);
    dils.push_back(std::max<std::size_t>(1, n / k));
    const std::size_t dil = dils[pick(0, dils.size() - 1)];
    const std::size_t heads = pick(1, 2), head_dim = pick(1, 3);
    const std::size_t C = heads * head_dim;
    const AttnGeometry g{nh, nw, k, dil, heads, head_dim};
    const auto p = random_dina<double>(C, heads, k, rng);
    const auto x = uniform<double>({pick(1, 2), nh, nw, C}, rng);
    out.max_err_f64 = std::max(
        out.max_err_f64,
        max_abs_diff(dina_forward(x, p, g), dense_masked_attention_oracle(x, p, g)));
    const auto pf = to_float(p);
    const auto xf = x.cast<float>();
    out.max_err_f32 = std::max(
        out.max_err_f32,
        static_cast<double>(max_abs_diff(dina_forward(xf, pf, g),
                                         dense_masked_attention_oracle(xf, pf, g))));
    ++out.cases;
  }
  out.seconds = since(t0);
  return out;
}

double full_window_sweep(std::uint64_t seed, std::size_t cases) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t k = 3 + 2 * (c % 3);
    const std::size_t heads = 1 + c % 2, C = 2 * heads;
    const auto p = random_dina<double>(C, heads, k, rng);
    const auto x = uniform<double>({1, k, k, C}, rng);
    const AttnGeometry g{k, k, k, 1, heads, C / heads};
    worst = std::max(worst, max_abs_diff(dina_forward(x, p, g),
                                         dense_attention_reference(x, p, heads)));
  }
  return worst;
}

CheckTable gradient_suite(std::uint64_t seed, double tol, double model_tol) {
  std::mt19937_64 rng(seed);
  GradCheckOptions opt;
  opt.tol = tol;
  opt.seed = seed;
  CheckTable t;

  const auto inputs = [&](std::initializer_list<std::pair<const char *, Shape>> xs) {
    ParamStore<double> s;
    for (const auto &[n, sh] : xs)
      s.add(n, uniform<double>(sh, rng));
    return s;
  };
  const auto P = [](Tape<double> &tp, const ParamStore<double> &ps,
                    const char *n) { return tp.param(ps, n); };

  {
    auto s = inputs({{"x", {1, 5, 6, 3}}, {"w", {3, 3, 3, 2}}, {"b", {2}}});
    t.push_back(check_store(
        "conv2d (stride 1 and 2)",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          auto x = P(tp, ps, "x"), w = P(tp, ps, "w"), b = P(tp, ps, "b");
          auto y1 = ad::conv2d(x, w, b, 1, ad::Padding::same);
          auto y2 = ad::conv2d(x, w, b, 2, ad::Padding::same);
          return ad::add(ad::sum(y1), ad::sum(ad::mul(y2, y2)));
        },
        s, rng, opt));
  }
  {
    auto s = inputs({{"x", {2, 4, 5, 3}}, {"w", {3, 3, 3}}, {"b", {3}}});
    t.push_back(check_store(
        "depthwise conv2d",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::depthwise_conv2d(P(tp, ps, "x"), P(tp, ps, "w"),
                                      P(tp, ps, "b"), 1, ad::Padding::same);
        },
        s, rng, opt));
  }
  {
    auto s = inputs({{"x", {1, 4, 4, 5}}, {"gamma", {5}}, {"beta", {5}}});
    t.push_back(check_store(
        "layer_norm",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::layer_norm(P(tp, ps, "x"), P(tp, ps, "gamma"),
                                P(tp, ps, "beta"), kLayerNormEps);
        },
        s, rng, opt));
  }
  {
    auto s = inputs({{"x", {4, 9}}});
    t.push_back(check_store(
        "softmax path",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::softmax_lastdim(ad::scale(P(tp, ps, "x"), 3.0));
        },
        s, rng, opt));
  }
  {
    ParamStore<double> s;
    Initializer init(rng());
    register_dina_params(s, "a", 4, 2, 3, true, init);
    randomize(s, rng);
    s.add("x", uniform<double>({1, 6, 7, 4}, rng));
    const AttnGeometry g{6, 7, 3, 2, 2, 2};
    t.push_back(check_store(
        "dina_forward (input and all parameters)",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::dina(tp, ps, "a", P(tp, ps, "x"), g);
        },
        s, rng, opt));
  }
  {
    auto s = inputs({{"x", {2, 3, 3, 6}}, {"w", {kLcclWidth}}});
    t.push_back(check_store(
        "lccl",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::lccl(P(tp, ps, "x"), P(tp, ps, "w"));
        },
        s, rng, opt));
  }
  const auto geom_local = block_geometry(6, 7, 4, 2, 3, DilationTag::local);
  const auto geom_global = block_geometry(6, 7, 4, 2, 3, DilationTag::global);
  {
    auto s = block_store(4, 2, 3, rng);
    s.add("x", uniform<double>({1, 6, 7, 4}, rng));
    t.push_back(check_store(
        "casa",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::casa(tp, ps, "b.casa", P(tp, ps, "x"), geom_global);
        },
        s, rng, opt));
  }
  for (auto kind : {FfnKind::dmfn, FfnKind::gdfn}) {
    auto s = block_store(4, 2, 3, rng);
    s.add("x", uniform<double>({2, 4, 5, 4}, rng));
    BlockOptions o;
    o.ffn = kind;
    t.push_back(check_store(
        kind == FfnKind::dmfn ? "dmfn" : "gdfn",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::ffn(tp, ps, "b.ffn", P(tp, ps, "x"), o);
        },
        s, rng, opt));
  }
  {
    auto s = ldff_params(6, 3, CfmMode::project, rng);
    s.add("x", uniform<double>({1, 5, 4, 6}, rng));
    t.push_back(check_store(
        "ecr",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::ecr(tp, ps, "l.ecr", P(tp, ps, "x"));
        },
        s, rng, opt));
  }
  for (auto mode : {CfmMode::project, CfmMode::split}) {
    auto s = ldff_params(4, 4, mode, rng);
    s.add("x", uniform<double>({2, 4, 5, 4}, rng));
    t.push_back(check_store(
        mode == CfmMode::project ? "cfm (project)" : "cfm (split)",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::cfm(tp, ps, "l.cfm", P(tp, ps, "x"), mode);
        },
        s, rng, opt));
  }
  for (int lvl : {1, 2}) {
    auto s = ldff_params(9, 3, CfmMode::project, rng);
    s.add("e1", uniform<double>({1, 8, 12, 2}, rng));
    s.add("e2", uniform<double>({1, 4, 6, 3}, rng));
    s.add("e3", uniform<double>({1, 2, 3, 4}, rng));
    t.push_back(check_store(
        "ldff_multiscale (target " + std::to_string(lvl) + ")",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::ldff_multiscale(tp, ps, "l", P(tp, ps, "e1"),
                                     P(tp, ps, "e2"), P(tp, ps, "e3"), lvl,
                                     CfmMode::project);
        },
        s, rng, opt));
  }
  {
    ParamStore<double> s;
    Initializer init(rng());
    register_residual_block(s, "r", 3, init);
    randomize(s, rng);
    s.add("x", uniform<double>({1, 5, 5, 3}, rng));
    t.push_back(check_store(
        "residual_block",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::residual_block(tp, ps, "r", P(tp, ps, "x"), 0.2);
        },
        s, rng, opt));
  }
  for (const auto *g : {&geom_local, &geom_global}) {
    auto s = block_store(4, 2, 3, rng);
    s.add("x", uniform<double>({1, 6, 7, 4}, rng));
    t.push_back(check_store(
        std::string("transformer_block (") +
            (g == &geom_local ? "local" : "global") + ")",
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::transformer_block(tp, ps, "b", P(tp, ps, "x"), *g, {});
        },
        s, rng, opt));
  }
  {
    const auto t0 = Clock::now();
    auto m = build_model(ModelConfig::preset("tiny"), rng()).cast<double>();
    randomize(m.params, rng, -0.2, 0.2);
    m.params.add("image", uniform<double>({1, 16, 16, 3}, rng, 0, 1));
    GradCheckOptions mo = opt;
    mo.tol = model_tol;
    mo.samples = 6;
    const auto r = grad_check(
        [&](Tape<double> &tp, const ParamStore<double> &ps) {
          return ad::mean(ad::model_forward(tp, m.config, ps, P(tp, ps, "image")));
        },
        m.params, mo);
    t.push_back(report("tiny model end to end", r, model_tol, t0));
  }
  return t;
}

CheckTable structural_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CheckTable t;
  {
    // (a) every residual unit type with its branch output zeroed.
    const auto t0 = Clock::now();
    bool ok = true;
    std::string which;
    const auto x = uniform<float>({1, 6, 7, 4}, rng);
    {
      ParamStore<float> s;
      Initializer init(rng());
      register_residual_block(s, "r", 4, init);
      randomize(s, rng);
      s.at("r.conv2_w").fill(0);
      s.at("r.conv2_b").fill(0);
      if (!(residual_block_forward(x, s, "r", 0.2f) == x))
        ok = false, which += " residual_block";
    }
    for (auto kind : {FfnKind::dmfn, FfnKind::gdfn}) {
      ParamStore<float> s;
      Initializer init(rng());
      register_transformer_block(s, "b", 4, 2, 3, true, init);
      randomize(s, rng);
      for (const char *n : {"b.casa.dina.out_w", "b.casa.dina.out_b",
                            "b.ffn.dw_w", "b.ffn.dw_b"})
        s.at(n).fill(0);
      BlockOptions o;
      o.ffn = kind;
      const auto g = block_geometry(6, 7, 4, 2, 3, DilationTag::global);
      if (!(transformer_block_forward(x, s, "b", g, o) == x))
        ok = false, which += " transformer_block";
    }
    for (auto mode : {CfmMode::project, CfmMode::split}) {
      ParamStore<float> s;
      Initializer init(rng());
      register_ldff(s, "l", 4, 4, mode, true, init);
      randomize(s, rng);
      s.at("l.cfm.dw_w").fill(0);
      s.at("l.cfm.dw_b").fill(0);
      if (!(cfm_forward(x, s, "l.cfm", mode) == x))
        ok = false, which += " cfm";
    }
    t.push_back(flag_check("zeroed branches give identity units", ok,
                           ok ? "residual, transformer (dmfn, gdfn), cfm (both modes): exact"
                              : "not identity:" + which,
                           t0));
  }
  {
    // (b) zero LCCL weights: gate sigmoid(0) = 1/2.
    const auto t0 = Clock::now();
    double worst = 0;
    for (int c = 0; c < 10; ++c) {
      ParamStore<float> s;
      Initializer init(rng());
      register_transformer_block(s, "b", 6, 2, 3, true, init);
      randomize(s, rng);
      s.at("b.casa.lccl_w").fill(0);
      const auto x = uniform<float>({2, 7, 6, 6}, rng);
      const auto g = block_geometry(7, 6, 6, 2, 3,
                                    c % 2 ? DilationTag::global : DilationTag::local);
      const auto attn =
          dina_forward(x, DinaParams<float>::from_store(s, "b.casa.dina"), g);
      worst = std::max(worst, static_cast<double>(max_abs_diff(
                                  casa_forward(x, s, "b.casa", g),
                                  ops::scale(attn, 0.5f))));
    }
    t.push_back(bound_check("zero-LCCL CASA equals 0.5 x DiNA (32-bit)", worst,
                            1e-6, t0));
  }
  {
    // (c) no biases: dmfn(a x) = a^2 dmfn(x).
    const auto t0 = Clock::now();
    double worst = 0;
    for (int c = 0; c < 5; ++c) {
      ParamStore<float> s;
      Initializer init(rng());
      register_ffn(s, "f", 6, false, init);
      randomize(s, rng);
      const auto x = uniform<float>({1, 5, 4, 6}, rng);
      const auto base = dmfn_forward(x, s, "f");
      for (float a : {0.5f, 2.0f, -1.5f}) {
        const auto y = dmfn_forward(ops::scale(x, a), s, "f");
        worst = std::max(worst, static_cast<double>(max_abs_diff(
                                    y, ops::scale(base, a * a))) /
                                    (a * a));
      }
    }
    t.push_back(bound_check("DMFN degree-2 homogeneity, zero biases (32-bit)",
                            worst, 1e-6, t0, "max err / a^2"));
  }
  {
    // (d) checkpoint bytes -> model -> bytes.
    const auto t0 = Clock::now();
    auto m = build_model(ModelConfig::preset("tiny"), rng());
    randomize(m.params, rng);
    const auto bytes = serialize_checkpoint(m);
    const auto back = deserialize_checkpoint(bytes);
    bool ok = back.config == m.config &&
              back.params.size() == m.params.size() &&
              serialize_checkpoint(back) == bytes;
    for (std::size_t i = 0; ok && i < m.params.size(); ++i) {
      const auto &a = m.params.entries()[i], &b = back.params.entries()[i];
      ok = a.name == b.name && a.value.shape() == b.value.shape() &&
           std::equal(a.value.vec().begin(), a.value.vec().end(),
                      b.value.vec().begin(), [](float u, float v) {
                        return std::bit_cast<std::uint32_t>(u) ==
                               std::bit_cast<std::uint32_t>(v);
                      });
    }
    t.push_back(flag_check("checkpoint round trip is bitwise", ok,
                           std::to_string(m.params.size()) + " tensors, " +
                               std::to_string(bytes.size()) + " bytes",
                           t0));
  }
  return t;
}

CheckTable composition_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CheckTable t;
  {
    const auto t0 = Clock::now();
    auto s = block_store(4, 2, 3, rng);
    const auto x = uniform<double>({1, 6, 7, 4}, rng);
    double worst = 0;
    for (auto tag : {DilationTag::local, DilationTag::global}) {
      const auto g = block_geometry(6, 7, 4, 2, 3, tag);
      const auto ln = [&](const Tensor<double> &v, const std::string &p) {
        return ops::layer_norm(v, s.at(p + ".gamma"), s.at(p + ".beta"),
                               kLayerNormEps);
      };
      const auto y = ops::add(x, casa_forward(ln(x, "b.norm1"), s, "b.casa", g));
      const auto z = ops::add(y, dmfn_forward(ln(y, "b.norm2"), s, "b.ffn"));
      worst = std::max(worst, max_abs_diff(transformer_block_forward(x, s, "b", g), z));
      // CASA itself: attention times the channel gate.
      const auto xn = ln(x, "b.norm1");
      const auto attn = dina_forward(xn, DinaParams<double>::from_store(s, "b.casa.dina"), g);
      worst = std::max(worst, max_abs_diff(casa_forward(xn, s, "b.casa", g),
                                           ops::mul(attn, lccl_forward(xn, s.at("b.casa.lccl_w")))));
    }
    t.push_back(bound_check("transformer block = x + CASA(LN x), then + FFN(LN)",
                            worst, 1e-12, t0));
  }
  {
    const auto t0 = Clock::now();
    auto s = ldff_params(9, 3, CfmMode::project, rng);
    const auto e1 = uniform<double>({1, 8, 12, 2}, rng);
    const auto e2 = uniform<double>({1, 4, 6, 3}, rng);
    const auto e3 = uniform<double>({1, 2, 3, 4}, rng);
    const auto u2 = ops::resize(e2, ops::Scale::up2);
    const auto u4 = ops::resize(e3, ops::Scale::up4);
    const auto cat1 = ops::concat_channels<double>({&e1, &u2, &u4});
    const auto want1 = cfm_forward(ecr_forward(cat1, s, "l.ecr"), s, "l.cfm",
                                   CfmMode::project);
    double worst = max_abs_diff(
        ldff_multiscale_forward(e1, e2, e3, 1, s, "l", CfmMode::project), want1);
    const auto d1 = ops::resize(e1, ops::Scale::down2);
    const auto u3 = ops::resize(e3, ops::Scale::up2);
    const auto cat2 = ops::concat_channels<double>({&d1, &e2, &u3});
    const auto want2 = cfm_forward(ecr_forward(cat2, s, "l.ecr"), s, "l.cfm",
                                   CfmMode::project);
    worst = std::max(worst, max_abs_diff(ldff_multiscale_forward(
                                             e1, e2, e3, 2, s, "l", CfmMode::project),
                                         want2));
    t.push_back(bound_check("multi-scale fusion = CFM(ECR(concat(resized)))",
                            worst, 1e-12, t0));
  }
  {
    const auto t0 = Clock::now();
    ParamStore<double> s;
    Initializer init(rng());
    register_residual_block(s, "r", 3, init);
    randomize(s, rng);
    const auto x = uniform<double>({1, 5, 5, 3}, rng);
    const auto h = ops::leaky_relu(
        ops::conv2d(x, s.at("r.conv1_w"), s.at("r.conv1_b"), 1, ops::Padding::same),
        0.2);
    const auto want = ops::add(
        x, ops::conv2d(h, s.at("r.conv2_w"), s.at("r.conv2_b"), 1, ops::Padding::same));
    t.push_back(bound_check("residual block = x + conv(leaky(conv x))",
                            max_abs_diff(residual_block_forward(x, s, "r", 0.2), want),
                            1e-12, t0));
  }
  {
    const auto t0 = Clock::now();
    auto m = build_model(ModelConfig::preset("tiny"), rng());
    const auto x = uniform<float>({1, 27, 30, 3}, rng, 0, 1);
    const auto y = forward(m, x, false);
    m.params.at("out.w").fill(0);
    m.params.at("out.b").fill(0);
    const auto id = forward(m, x, false);
    const bool ok = y.shape() == x.shape() && id == x;
    t.push_back(flag_check("model keeps H x W and zero head gives the input",
                           ok, "27x30 input", t0));
  }
  return t;
}

CheckTable metric_suite() {
  CheckTable t;
  auto t0 = Clock::now();
  Tensor<double> a({8, 8, 3}, 0.3), b({8, 8, 3}, 0.4);
  t.push_back(bound_check("psnr uniform 0.1 offset = 20 dB",
                          std::abs(psnr(a, b) - 20.0), 1e-9, t0, "|err|"));
  std::mt19937_64 rng(1);
  const auto r1 = uniform<double>({12, 12, 3}, rng, 0, 1);
  const auto r2 = uniform<double>({12, 12, 3}, rng, 0, 1);
  t0 = Clock::now();
  t.push_back(flag_check("psnr(a, a) = cap, ssim(a, a) = 1",
                         psnr(r1, r1) == kPsnrCap && ssim(r1, r1) == 1.0,
                         fmt("psnr %.1f, ssim %.17g", psnr(r1, r1), ssim(r1, r1)), t0));
  t0 = Clock::now();
  Tensor<double> red({2, 2, 3}), cyan({2, 2, 3});
  for (std::size_t p = 0; p < 4; ++p) {
    red[3 * p] = 1;
    cyan[3 * p + 1] = cyan[3 * p + 2] = 1;
  }
  t.push_back(bound_check("hue distance red vs cyan = 100%",
                          std::abs(hue_distance(red, cyan) - 100.0), 1e-9, t0,
                          "|err|"));
  t0 = Clock::now();
  const bool sym = psnr(r1, r2) == psnr(r2, r1) && ssim(r1, r2) == ssim(r2, r1) &&
                   hue_distance(r1, r2) == hue_distance(r2, r1);
  t.push_back(flag_check("psnr, ssim, hue distance symmetric", sym, "exact", t0));
  return t;
}

CheckTable selftest_suite(std::uint64_t seed) {
  CheckTable t;
  const auto sweep = dina_oracle_sweep(seed, 200);
  t.push_back({"DiNA vs dense masked oracle, 200 cases (64-bit)",
               sweep.max_err_f64 <= 1e-10,
               fmt("max err %.3g <= %.3g", sweep.max_err_f64, 1e-10), sweep.seconds});
  t.push_back({"DiNA vs dense masked oracle, 200 cases (32-bit)",
               sweep.max_err_f32 <= 1e-5,
               fmt("max err %.3g <= %.3g", sweep.max_err_f32, 1e-5), 0});
  const auto t0 = Clock::now();
  t.push_back(bound_check("full window equals dense attention, 20 cases",
                          full_window_sweep(seed + 1, 20), 1e-6, t0));
  for (auto &r : structural_suite(seed + 2))
    t.push_back(std::move(r));
  for (auto &r : composition_suite(seed + 3))
    t.push_back(std::move(r));
  for (auto &r : metric_suite())
    t.push_back(std::move(r));
  return t;
}

} // namespace ddnt
