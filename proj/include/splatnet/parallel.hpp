#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace splatnet {

namespace detail {
inline std::atomic<unsigned>& thread_count_storage() {
  static std::atomic<unsigned> count{1};
  return count;
}
}  // namespace detail

/// Number of worker threads used by gather-style loops. Defaults to 1.
inline unsigned num_threads() { return detail::thread_count_storage().load(); }
inline void set_num_threads(unsigned n) { detail::thread_count_storage().store(std::max(1u, n)); }

/// Runs body(begin, end) over contiguous static chunks of [0, count). Each
/// index is handled by exactly one thread, so gathers that write only to their
/// own rows are bitwise identical for any thread count.
template <typename Body>
void parallel_for(std::size_t count, Body&& body, std::size_t min_chunk = 1024) {
  const std::size_t threads =
      std::min<std::size_t>(num_threads(), std::max<std::size_t>(1, count / min_chunk));
  if (threads <= 1) {
    body(std::size_t{0}, count);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads - 1);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = std::min(count, t * chunk);
    const std::size_t end = std::min(count, begin + chunk);
    workers.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(std::size_t{0}, std::min(count, chunk));
}

}  // namespace splatnet
