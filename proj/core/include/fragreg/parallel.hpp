// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#pragma once

#include <cstdint>
#include <functional>

namespace fragreg {

// Process-wide worker pool used for data-parallel loops (ray casting,
// candidate pose evaluation, trial batches). Results must not depend on
// the number of workers: callers write to disjoint output slots and any
// reductions happen on the calling thread in index order.

// Set the worker count. 0 = hardware concurrency. May be called again;
// existing workers are torn down and recreated.
void set_thread_count(int n);

int thread_count();

// Invokes fn(i) for i in [begin, end), distributing contiguous chunks over
// the pool. Blocks until all iterations are complete. Exceptions thrown by
// fn are captured and rethrown (first one wins) on the calling thread.
// Reentrant calls from inside a worker run the loop inline.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn,
                  std::int64_t grain = 1);

}  // namespace fragreg
