#pragma once

#include <cstddef>
#include <functional>

namespace ecoenc::util {

/// Worker count used when a caller passes threads == 0.
std::size_t default_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; callers write results into per-index slots, so the outcome
/// never depends on the worker count. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace ecoenc::util
