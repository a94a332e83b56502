#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace cshap {

// 0 or negative -> hardware concurrency (at least 1).
inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [begin, end) on up to `threads` workers. Work is
// strided so each index always lands on the same worker; outputs must be
// written to per-index slots, which keeps results independent of the thread
// count. If several calls throw, the exception from the lowest index wins.
inline void parallel_for(int begin, int end, int threads,
                         const std::function<void(int)>& fn) {
  const int n = end - begin;
  if (n <= 0) return;
  int workers = std::min(effective_threads(threads), n);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }

  std::vector<std::exception_ptr> errors(workers);
  std::vector<int> error_index(workers, end);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = begin + w; i < end; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
          error_index[w] = i;
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();

  int first = end;
  std::exception_ptr eptr;
  for (int w = 0; w < workers; ++w) {
    if (errors[w] && error_index[w] < first) {
      first = error_index[w];
      eptr = errors[w];
    }
  }
  if (eptr) std::rethrow_exception(eptr);
}

}  // namespace cshap
