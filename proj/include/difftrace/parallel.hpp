#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace difftrace {

namespace detail {
inline std::atomic<unsigned>& thread_count_ref() {
  static std::atomic<unsigned> count{1};
  return count;
}
}  // namespace detail

/// Number of worker threads used by batched evaluation. Results never depend on it.
inline unsigned num_threads() { return detail::thread_count_ref().load(); }
inline void set_num_threads(unsigned n) { detail::thread_count_ref().store(std::max(1u, n)); }

/// Splits [0, n) into contiguous blocks and runs fn(begin, end) on each.
/// Blocks below min_block rows stay on the calling thread.
template <class Fn>
void parallel_for_blocks(std::size_t n, std::size_t min_block, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(num_threads(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_block)));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace difftrace
