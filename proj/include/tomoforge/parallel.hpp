#pragma once

#include <cstddef>
#include <functional>

namespace tomo {

// Worker count used by the parallel loops. 0 selects hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Splits [0, n) into thread_count() contiguous chunks and calls
// fn(begin, end, worker) on each. Chunk boundaries depend only on n and the
// worker count, so results are reproducible for a fixed worker count.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, int)>& fn);

}  // namespace tomo
