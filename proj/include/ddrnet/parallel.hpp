#pragma once

#include <cstdint>
#include <functional>

namespace ddrnet {

/// Number of worker threads used by intra-op parallel loops (>= 1).
int num_threads();
void set_num_threads(int n);

/// Splits [begin, end) into contiguous chunks and runs `fn(chunk_begin, chunk_end)`
/// on up to num_threads() threads. Chunk boundaries never affect the values a
/// caller computes per index, so results are independent of the thread count.
void parallel_for(int64_t begin, int64_t end, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ddrnet
