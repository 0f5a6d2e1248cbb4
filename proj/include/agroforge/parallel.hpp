#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace agroforge {

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// thrown by any call is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 1; w < count; ++w) threads.emplace_back(run);
    if (count > 0) run();
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace agroforge
