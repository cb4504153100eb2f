#pragma once

#include <cstddef>
#include <functional>

namespace das2 {

/// Worker count from DAS2_THREADS (default 1, at least 1).
std::size_t thread_count();

/// Calls fn(i) for i in [0, n) on up to thread_count() threads in contiguous
/// chunks. fn must only write state owned by index i; the first exception
/// thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Keeps large temporaries on the heap instead of fresh mmap pages, which
/// otherwise dominates run time for batch-sized tape nodes. glibc only; a
/// no-op elsewhere. Call once at program start.
void tune_allocator();

}  // namespace das2
