#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vsms {

inline int hardware_threads() noexcept { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls f(i) for i in [0, n) on up to `threads` workers. Work items must be
/// independent; callers write into per-index slots and reduce afterwards in
/// index order so results do not depend on the thread count. The first
/// exception thrown by any item is rethrown here.
template <typename F>
void parallel_for(int n, int threads, F&& f) {
  const int workers = std::clamp(threads, 1, std::max(n, 1));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace vsms
