#pragma once

#include <chrono>
#include <thread>

#include "vad/core/error.hpp"

namespace vad {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{200};  // doubled after each failure
};

// Calls fn until it succeeds or the policy's attempts are exhausted; only
// TransportError is retried. The last TransportError is rethrown.
template <typename F>
auto with_retries(const RetryPolicy& policy, F&& fn) -> decltype(fn()) {
  auto delay = policy.base_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= policy.attempts) throw;
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

}  // namespace vad
