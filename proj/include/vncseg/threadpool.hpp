#pragma once

#include <cstdint>
#include <functional>

namespace vncseg {

// Worker count used by parallel_for. Defaults to VNCSEG_THREADS if set,
// otherwise to the hardware thread count.
int worker_count();
void set_worker_count(int n);

// Splits [begin, end) into one contiguous chunk per worker and runs
// fn(chunk_begin, chunk_end) on each. Every index is handled by exactly one
// worker, so results are independent of the worker count as long as fn
// writes only to locations derived from its own indices.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace vncseg
