#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace tsrd {

/// Static-partition fork-join over [0, n). Workers own disjoint index ranges
/// (disjoint writes only; reductions stay with the caller), so results do not
/// depend on the worker count. threads <= 1 runs inline.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& body) {
  if (n <= 0) return;
  threads = std::min(threads, n);
  if (threads <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads - 1));
  const int chunk = (n + threads - 1) / threads;
  for (int k = 1; k < threads; ++k) {
    const int b = k * chunk, e = std::min(n, (k + 1) * chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(0, std::min(n, chunk));
  for (auto& th : pool) th.join();
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

}  // namespace tsrd
