// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central finite-difference verification of tape gradients.
 *
 * Relative error per coordinate is |a - n| / max(|a|, |n|, floor), where a is
 * the analytic gradient and n the central difference. The floor keeps
 * coordinates whose true gradient is ~0 from dominating via round-off; it is
 * raised to noise/tol where noise ~ 8 eps |f| / step is the round-off bound
 * of the difference quotient.
 */
#pragma once

#include "ddnt/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ddnt {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  double floor = 1e-6;
  /// Coordinates checked per input; inputs smaller than this are checked
  /// exhaustively.
  std::size_t samples = 64;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_input;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
  /// Set when a non-finite value was met; names the input and coordinate.
  std::string failure;
};

/// Builds a scalar loss from one Var per entry of `inputs`.
using LossFn = std::function<Var<double>(Tape<double> &,
                                         const std::vector<Var<double>> &)>;

struct NamedInput {
  std::string name;
  Tensor<double> value;
};

GradCheckReport grad_check(const LossFn &f, std::vector<NamedInput> inputs,
                           const GradCheckOptions &opt = {});

/// Checks every grad-requiring entry of `store`; f must read parameters via
/// Tape::param so perturbations of the store are seen.
using StoreLossFn =
    std::function<Var<double>(Tape<double> &, const ParamStore<double> &)>;
GradCheckReport grad_check(const StoreLossFn &f, ParamStore<double> &store,
                           const GradCheckOptions &opt = {});

/// Single-input convenience form.
GradCheckReport
grad_check(const std::function<Var<double>(Tape<double> &, Var<double>)> &f,
           const Tensor<double> &x, double tol);

} // namespace ddnt
