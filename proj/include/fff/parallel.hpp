#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fff {

// Splits [0, n) into at most `threads` contiguous ranges and calls
// fn(begin, end) for each, one range per thread. With threads <= 1 the call
// happens inline. The first exception raised by any range is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t per = (n + threads - 1) / threads;
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * per;
      const std::size_t end = std::min(n, begin + per);
      if (begin >= end) break;
      pool.emplace_back([&, t, begin, end] {
        try {
          fn(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace fff
