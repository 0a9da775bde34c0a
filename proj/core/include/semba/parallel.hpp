#pragma once

#include <cstddef>
#include <functional>

namespace semba {

/// Worker count: SEMBA_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
int thread_count();

/// Calls fn(i) for i in [0, n) across up to thread_count() threads. Indices
/// are dealt out in contiguous chunks; fn must not share mutable state.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace semba
