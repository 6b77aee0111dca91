#pragma once

// Minimal deterministic work-sharing: contiguous index chunks over a fixed
// thread count, exceptions rethrown on the caller thread. Results must be
// written to disjoint per-index slots; reductions happen afterwards in index
// order, which is what keeps outputs bit-identical for any --threads value.

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace pame {

inline void parallel_for(int count, int threads,
                         const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (threads > count) threads = count;
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    const int lo = int(int64_t(count) * t / threads);
    const int hi = int(int64_t(count) * (t + 1) / threads);
    pool.emplace_back([&, t, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace pame
