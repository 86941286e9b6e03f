#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace kdl::par {

// Worker cap shared by all parallel loops; the CLI --threads flag sets it.
int max_threads();
void set_max_threads(int n);

/**
 * Runs body(i) for i in [begin, end) on up to max_threads() workers.
 * Iterations are claimed in fixed-size blocks; any reduction the caller
 * performs must be per-block-deterministic (accumulate into per-index slots
 * and combine sequentially afterwards).
 */
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body,
                  std::int64_t grain = 1);

}  // namespace kdl::par
