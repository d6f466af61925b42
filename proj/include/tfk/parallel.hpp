#pragma once

#include <cstddef>
#include <functional>

namespace tfk {

/// Worker count used by parallel_for. Defaults to 1; the CLI sets it from
/// --threads or TFK_THREADS.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for i in [0, n). Work is split into contiguous static chunks,
/// so every index is processed by exactly one worker and results written to
/// per-index slots do not depend on the worker count. Nested calls run
/// serially on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace tfk
