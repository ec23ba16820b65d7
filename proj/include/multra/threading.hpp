#pragma once

// Deterministic worker-pool helpers. Work is split into fixed-size chunks
// whose boundaries never depend on the worker count, and every chunk writes
// only its own output range, so results are bit-identical for any thread
// count.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace multra::threading {

inline std::atomic<int>& worker_count_storage() {
  static std::atomic<int> count{1};
  return count;
}

inline void set_thread_count(int n) { worker_count_storage().store(n < 1 ? 1 : n); }
inline int thread_count() { return worker_count_storage().load(); }

// Runs fn(begin, end) over consecutive chunks of [0, n).
inline void parallel_chunks(std::int64_t n, std::int64_t chunk_size,
                            const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  if (chunk_size < 1) chunk_size = 1;
  const std::int64_t n_chunks = (n + chunk_size - 1) / chunk_size;
  const int workers = std::min<std::int64_t>(thread_count(), n_chunks);

  if (workers <= 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) {
      const std::int64_t begin = c * chunk_size;
      fn(begin, std::min(begin + chunk_size, n));
    }
    return;
  }

  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      const std::int64_t begin = c * chunk_size;
      try {
        fn(begin, std::min(begin + chunk_size, n));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int t = 0; t < workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace multra::threading
