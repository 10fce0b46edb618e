#pragma once

#include <cstdint>

namespace vxf {

/// Worker threads used by data-parallel kernels.
int thread_count() noexcept;
void set_thread_count(int threads);

/// Applies VOXELFORGE_THREADS when set. Returns the resulting count.
int configure_threads_from_env();

/// Static partition of [0, n); each index is processed by exactly one thread
/// and results never depend on the number of threads.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  if (n <= 0) return;
  if (n == 1 || thread_count() == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace vxf
