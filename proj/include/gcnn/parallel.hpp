#pragma once

#include <omp.h>

#include <algorithm>
#include <atomic>

namespace gcnn {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{1};
  return n;
}
}  // namespace detail

/// Thread count used by kernels that parallelize over independent rows.
/// Results never depend on this value.
inline int num_threads() { return detail::thread_setting().load(std::memory_order_relaxed); }
inline void set_num_threads(int n) { detail::thread_setting().store(std::max(1, n)); }

/// RAII override of the kernel thread count.
class ScopedThreads {
 public:
  explicit ScopedThreads(int n) : saved_(num_threads()) { set_num_threads(n); }
  ~ScopedThreads() { set_num_threads(saved_); }
  ScopedThreads(const ScopedThreads&) = delete;
  ScopedThreads& operator=(const ScopedThreads&) = delete;

 private:
  int saved_;
};

}  // namespace gcnn
