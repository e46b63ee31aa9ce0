#pragma once

#include <cstddef>
#include <functional>

namespace eqsae {

// Number of worker threads used by parallel_for. Defaults to the hardware
// concurrency; settable once from the CLI. Results never depend on it: each
// output element is produced by exactly one worker with a fixed internal
// summation order.
int worker_count();
void set_worker_count(int n);

// Runs body(begin, end) over a static contiguous partition of [0, n).
// Nested calls execute serially on the calling thread.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace eqsae
