#pragma once

#include <cstdint>
#include <functional>

namespace usdn {

// Number of worker threads (including the calling thread). Reads
// USDN_THREADS once; defaults to the hardware concurrency.
int thread_count();

// Runs fn(begin, end) over a partition of [0, n). The partition depends only
// on n and the configured thread count, never on scheduling, so any
// computation whose chunks write disjoint outputs is bitwise reproducible.
// fn must not touch shared mutable state across chunks.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// Same, but with a minimum chunk size; small ranges run inline.
void parallel_for_grain(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace usdn
