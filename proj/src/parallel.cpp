// SPDX-License-Identifier: Apache-2.0
#include "fixnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace fixnet::util {

namespace {
std::atomic<int> g_threads{0};

int resolve_threads() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n > 0) return n;
  if (const char* env = std::getenv("FIXNET_THREADS")) {
    int e = std::atoi(env);
    if (e > 0) return e;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

void set_parallel_threads(int n) { g_threads.store(n, std::memory_order_relaxed); }
int parallel_threads() { return resolve_threads(); }

void parallel_for(int64_t begin, int64_t end, int64_t min_chunk,
                  const std::function<void(int64_t, int64_t)>& fn) {
  int64_t total = end - begin;
  if (total <= 0) return;
  int workers = resolve_threads();
  int64_t max_by_chunk = min_chunk > 0 ? (total + min_chunk - 1) / min_chunk : total;
  workers = static_cast<int>(std::min<int64_t>(workers, max_by_chunk));
  if (workers <= 1) {
    fn(begin, end);
    return;
  }
  int64_t chunk = (total + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) {
    int64_t lo = begin + w * chunk;
    int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(fn, lo, hi);
  }
  fn(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

}  // namespace fixnet::util
