#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace gmmdiff {

/// Worker count used when a caller passes 0: the THREADS environment
/// variable if set, else std::thread::hardware_concurrency().
inline std::size_t default_threads() {
  if (const char* env = std::getenv("THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Tasks must
/// write only to their own output slot. If any task throws, the exception of
/// the lowest failing index is rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t count, std::size_t threads, F&& fn) {
  if (threads == 0) threads = default_threads();
  threads = std::min(threads, count);
  std::vector<std::exception_ptr> errors(count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Compensated running sum.
class KahanSum {
 public:
  void add(double v) {
    const double y = v - carry_;
    const double t = sum_ + y;
    carry_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const noexcept { return sum_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

}  // namespace gmmdiff
