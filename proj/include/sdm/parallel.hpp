#pragma once

#include "sdm/core.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sdm {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items are
// claimed dynamically, so callers must write results by index to stay
// independent of the worker count. The first exception is rethrown.
template <class Fn>
void parallel_for(Index n, int workers, Fn&& fn) {
  if (n <= 0) return;
  const int threads = static_cast<int>(std::clamp<Index>(workers, 1, n));
  if (threads == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const Index i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace sdm
