#include "fewview/parallel.hpp"

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace fewview {

namespace {

std::mutex g_mutex;
int g_threads = 0;
std::unique_ptr<tbb::global_control> g_control;

}  // namespace

int default_thread_count() {
  if (const char* env = std::getenv("FEWVIEW_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_thread_count(int threads) {
  std::lock_guard lock(g_mutex);
  g_threads = threads > 0 ? threads : default_thread_count();
  g_control = std::make_unique<tbb::global_control>(
      tbb::global_control::max_allowed_parallelism,
      static_cast<std::size_t>(g_threads));
}

int thread_count() {
  {
    std::lock_guard lock(g_mutex);
    if (g_threads > 0) return g_threads;
  }
  set_thread_count(0);
  return g_threads;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  if (thread_count() <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n),
                    [&](const tbb::blocked_range<std::size_t>& r) {
                      for (std::size_t i = r.begin(); i != r.end(); ++i) body(i);
                    });
}

}  // namespace fewview
