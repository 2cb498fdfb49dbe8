// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace ddnt {

/// Worker count from DDNT_THREADS (0 or unset = hardware concurrency).
/// set_num_threads overrides the environment; 1 forces single-threaded mode.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(i) for i in [begin, end) split into contiguous chunks. Callers
/// only use it where each i writes disjoint output with a fixed reduction
/// order, so results do not depend on the thread count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)> &fn);

} // namespace ddnt
