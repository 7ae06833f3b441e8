#pragma once

#include <cstddef>
#include <functional>

namespace tpi {

/// Worker count from `TPI_THREADS`, falling back to the hardware
/// concurrency (at least 1).
unsigned default_thread_count();

/// Runs `body(i)` for every i in [0, count) on up to `threads` workers
/// (0 means `default_thread_count()`).  Each index is visited exactly once;
/// callers write results into per-index slots so the outcome does not
/// depend on scheduling.  The first exception thrown by any body is
/// rethrown after all workers join.
void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace tpi
