#pragma once

#include <cstddef>
#include <functional>

namespace fewview {

// Worker count from FEWVIEW_THREADS, or the hardware concurrency.
int default_thread_count();

// Pins the worker count used by parallel_for for the process lifetime
// (0 restores the default).
void set_thread_count(int threads);
int thread_count();

// Runs body(i) for i in [0, n). Work items must write disjoint memory;
// callers merge any partial results in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fewview
