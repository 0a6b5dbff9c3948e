#pragma once

#include <cstddef>
#include <functional>

namespace bddm {

/// Worker count: hardware concurrency capped by the BDDM_THREADS environment variable.
int thread_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks, so results
/// written by index are identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace bddm
