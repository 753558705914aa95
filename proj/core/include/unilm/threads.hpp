// SPDX-License-Identifier: MIT
#pragma once

#include <cstddef>
#include <functional>

namespace unilm {

// Global worker count for parallel_for. Thread-safe; clamped to >= 1.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for every i in [begin, end), split into contiguous chunks across
// worker threads. Blocks until all chunks finish. Callers must ensure chunks
// write disjoint outputs; under that contract results are bitwise identical
// for any thread count.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn);

} // namespace unilm
