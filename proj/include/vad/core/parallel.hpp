#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace vad {

// Maps fn over [0, n) with at most `bound` calls in flight. Results come back in
// index order regardless of completion order. The first exception is rethrown after
// all workers join.
template <typename R>
std::vector<R> bounded_map(std::size_t n, std::size_t bound, const std::function<R(std::size_t)>& fn) {
  std::vector<R> out(n);
  if (n == 0) return out;
  bound = std::clamp<std::size_t>(bound, 1, n);
  if (bound == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || first_error) return;
        i = next++;
      }
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(bound);
    for (std::size_t t = 0; t < bound; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace vad
