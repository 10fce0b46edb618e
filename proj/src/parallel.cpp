#include "voxelforge/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>

#include "voxelforge/errors.hpp"

namespace vxf {
namespace {

std::atomic<int> g_threads{0};

}  // namespace

int thread_count() noexcept {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n <= 0) n = std::max(1, omp_get_max_threads());
  return n;
}

void set_thread_count(int threads) {
  if (threads < 1) throw UsageError("thread count must be at least 1");
  g_threads.store(threads, std::memory_order_relaxed);
}

int configure_threads_from_env() {
  if (const char* env = std::getenv("VOXELFORGE_THREADS"); env && *env) {
    int value = 0;
    try {
      value = std::stoi(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("VOXELFORGE_THREADS is not an integer: ") + env);
    }
    set_thread_count(value);
  }
  return thread_count();
}

}  // namespace vxf
