// SPDX-License-Identifier: Apache-2.0
#include "ddnt/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace ddnt {

namespace {

std::atomic<std::size_t> g_override{0};

std::size_t from_env() {
  const char *s = std::getenv("DDNT_THREADS");
  std::size_t n = 0;
  if (s != nullptr) {
    try {
      n = static_cast<std::size_t>(std::stoul(s));
    } catch (...) {
      n = 0;
    }
  }
  if (n == 0)
    n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

} // namespace

std::size_t num_threads() {
  auto o = g_override.load();
  if (o != 0)
    return o;
  static const std::size_t env = from_env();
  return env;
}

void set_num_threads(std::size_t n) { g_override.store(n); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)> &fn) {
  if (end <= begin)
    return;
  const std::size_t total = end - begin;
  const std::size_t workers = std::min(num_threads(), total);
  if (workers <= 1 || total < 4) {
    for (std::size_t i = begin; i < end; ++i)
      fn(i);
    return;
  }
  const std::size_t chunk = (total + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) {
    const std::size_t lo = begin + t * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi)
      break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i)
        fn(i);
    });
  }
  for (std::size_t i = begin; i < std::min(end, begin + chunk); ++i)
    fn(i);
  for (auto &th : pool)
    th.join();
}

} // namespace ddnt
