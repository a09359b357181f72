#pragma once

#include <chrono>
#include <functional>
#include <string_view>
#include <thread>
#include <utility>

#include "synthcurate/errors.hpp"

namespace synthcurate {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
  double multiplier = 2.0;
};

// Runs fn until it returns without throwing BackendError or attempts run out;
// the last exception propagates. Sleeps initial_backoff * multiplier^(n-1)
// between attempts.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto backoff = std::chrono::duration<double, std::milli>(policy.initial_backoff);
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const BackendError&) {
      if (attempt >= policy.max_attempts) throw;
    }
    if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
    backoff *= policy.multiplier;
  }
}

}  // namespace synthcurate
