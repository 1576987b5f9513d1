#pragma once

#include <cstddef>
#include <functional>

namespace pepler::num {

// Worker count for parallel loops: 1 unless PEPLER_THREADS asks for more,
// never above PEPLER_THREADS, never above the hardware thread count.
int max_threads();

// Runs fn(begin, end) over disjoint chunks of [0, n). Every index belongs to
// exactly one chunk regardless of worker count, so loops whose chunks write
// disjoint outputs produce bit-identical results serial or parallel.
// Falls back to a single inline call when n < min_parallel or only one
// worker is configured.
void parallel_for(std::size_t n, std::size_t min_parallel,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace pepler::num
