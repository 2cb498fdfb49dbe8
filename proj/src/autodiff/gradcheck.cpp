// SPDX-License-Identifier: Apache-2.0
#include "ddnt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace ddnt {

namespace {

double eval_loss(const StoreLossFn &f, const ParamStore<double> &store) {
  Tape<double> tape(false);
  return f(tape, store).value()[0];
}

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t samples,
                                     std::mt19937_64 &rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), 0);
  if (numel <= samples)
    return idx;
  // Partial Fisher-Yates keeps the choice independent of libstdc++ details.
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t j = i + rng() % (numel - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(samples);
  std::sort(idx.begin(), idx.end());
  return idx;
}

} // namespace

GradCheckReport grad_check(const StoreLossFn &f, ParamStore<double> &store,
                           const GradCheckOptions &opt) {
  GradCheckReport rep;
  Gradients<double> grads;
  {
    Tape<double> tape;
    auto loss = f(tape, store);
    if (!std::isfinite(loss.value()[0])) {
      rep.failure = "non-finite loss at the unperturbed point";
      return rep;
    }
    grads = tape.backward(loss);
  }
  std::mt19937_64 rng(opt.seed);
  for (auto &e : store.entries()) {
    if (!e.requires_grad)
      continue;
    auto git = grads.find(e.name);
    const Tensor<double> zero(e.value.shape());
    const Tensor<double> &analytic = git == grads.end() ? zero : git->second;
    for (std::size_t i : pick_coords(e.value.numel(), opt.samples, rng)) {
      const double orig = e.value[i];
      e.value[i] = orig + opt.step;
      const double fp = eval_loss(f, store);
      e.value[i] = orig - opt.step;
      const double fm = eval_loss(f, store);
      e.value[i] = orig;
      const double numeric = (fp - fm) / (2 * opt.step);
      const double a = analytic[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        rep.failure = "non-finite value at " + e.name + "[" +
                      std::to_string(i) + "]";
        rep.worst_input = e.name;
        rep.worst_index = i;
        rep.passed = false;
        return rep;
      }
      // Round-off in (fp - fm) bounds how well a ~0 gradient can be
      // resolved; below that level only the absolute error is meaningful.
      const double noise = 8 * std::numeric_limits<double>::epsilon() *
                           std::max({std::abs(fp), std::abs(fm), 1.0}) /
                           opt.step;
      const double denom = std::max(
          {std::abs(a), std::abs(numeric), opt.floor, noise / opt.tol});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_input = e.name;
        rep.worst_index = i;
      }
    }
  }
  rep.passed = rep.checked > 0 && rep.max_rel_error <= opt.tol;
  return rep;
}

GradCheckReport grad_check(const LossFn &f, std::vector<NamedInput> inputs,
                           const GradCheckOptions &opt) {
  ParamStore<double> store;
  std::vector<std::string> names;
  for (auto &in : inputs) {
    names.push_back(in.name);
    store.add(in.name, std::move(in.value));
  }
  StoreLossFn g = [&](Tape<double> &tape, const ParamStore<double> &s) {
    std::vector<Var<double>> vars;
    vars.reserve(names.size());
    for (const auto &n : names)
      vars.push_back(tape.param(s, n));
    return f(tape, vars);
  };
  return grad_check(g, store, opt);
}

GradCheckReport
grad_check(const std::function<Var<double>(Tape<double> &, Var<double>)> &f,
           const Tensor<double> &x, double tol) {
  GradCheckOptions opt;
  opt.tol = tol;
  LossFn g = [&](Tape<double> &tape, const std::vector<Var<double>> &v) {
    return f(tape, v[0]);
  };
  return grad_check(g, {{"x", x}}, opt);
}

} // namespace ddnt
