#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace p2p {

/// Calls body(begin, end) on contiguous chunks of [0, count). Chunks are
/// disjoint, so bodies that write only their own range are race-free and
/// give the same result for any worker count. The first exception thrown
/// by a chunk (lowest chunk index) is rethrown after all chunks finish.
template <typename Body>
void parallel_for(std::size_t count, int workers, Body&& body) {
  if (workers <= 1 || count < 2) {
    body(std::size_t{0}, count);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  const std::size_t step = (count + chunks - 1) / chunks;
  std::vector<std::exception_ptr> errors(chunks);
  const auto guarded = [&body, &errors](std::size_t c, std::size_t begin, std::size_t end) {
    try {
      body(begin, end);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(chunks - 1);
    for (std::size_t c = 1; c < chunks; ++c) {
      const std::size_t begin = c * step;
      const std::size_t end = std::min(count, begin + step);
      if (begin < end) pool.emplace_back([&guarded, c, begin, end] { guarded(c, begin, end); });
    }
    guarded(0, 0, std::min(count, step));
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace p2p
