// SPDX-License-Identifier: Apache-2.0
/**
 * @file   suites.hpp
 * @brief  Self-contained verification suites shared by the command-line
 *         `selftest` and `gradcheck` commands and the acceptance runner.
 */
#pragma once

#include "ddnt/dina.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ddnt {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};
using CheckTable = std::vector<CheckResult>;

bool all_passed(const CheckTable &table);
/// One line per check: PASS/FAIL, name, detail, time.
std::string format_table(const CheckTable &table);

/// Unmasked dense self-attention with relative bias indexed by the raw
/// offset between tokens. Equals the layer when the window covers the grid.
Tensor<double> dense_attention_reference(const Tensor<double> &x,
                                         const DinaParams<double> &p,
                                         std::size_t heads);

struct OracleSweep {
  std::size_t cases = 0;
  double max_err_f32 = 0;
  double max_err_f64 = 0;
  double seconds = 0;
};
/// Randomized grids n in [6,16] per axis, k in {3,5}, dilation in
/// {1, 2, floor(n/k)}, heads in {1,2}; each case at 32 and 64 bits against
/// the dense masked oracle.
OracleSweep dina_oracle_sweep(std::uint64_t seed, std::size_t cases);

/// n_h = n_w = k, dilation 1: max |layer - dense_attention_reference| over
/// `cases` random layers, k in {3,5,7}.
double full_window_sweep(std::uint64_t seed, std::size_t cases);

/// Finite-difference checks at 64 bits for every primitive with a custom
/// backward, each block type, and the Tiny model end to end (model_tol).
CheckTable gradient_suite(std::uint64_t seed, double tol = 1e-4,
                          double model_tol = 1e-3);

/// Zeroed branches give identity units, zero-LCCL CASA is half the
/// attention, DMFN is 2-homogeneous, checkpoints round-trip bitwise.
CheckTable structural_suite(std::uint64_t seed);

/// Block and fusion outputs against compositions of their parts.
CheckTable composition_suite(std::uint64_t seed);

/// Closed-form metric cases.
CheckTable metric_suite();

/// Everything `selftest` runs.
CheckTable selftest_suite(std::uint64_t seed);

} // namespace ddnt
