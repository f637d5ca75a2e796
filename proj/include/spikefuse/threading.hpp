#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace spikefuse {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Indices are strided
// so the assignment of work to threads is a pure function of (n, workers);
// callers must only write to per-index slots, which keeps results identical
// for every worker count.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers < 1) workers = 1;
  const std::size_t nthreads =
      std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(nthreads);
  threads.reserve(nthreads);
  for (std::size_t tid = 0; tid < nthreads; ++tid) {
    threads.emplace_back([&, tid]() {
      try {
        for (std::size_t i = tid; i < n; i += nthreads) fn(i);
      } catch (...) {
        errors[tid] = std::current_exception();
      }
    });
  }
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace spikefuse
