#pragma once

#include <cstddef>
#include <functional>

namespace gaze {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency. Results never depend on this value: callers only hand
/// independent per-index work to parallel_for and reduce in index order.
std::size_t worker_count();
void set_worker_count(std::size_t workers);

/// Runs fn(i) for i in [0, n). Indices are split into contiguous chunks, one
/// per worker. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gaze

namespace gaze {

/// Asks the C allocator to keep freed blocks instead of returning them to the
/// OS. Training allocates and frees the same large activation buffers every
/// step; without this each step pays fresh page faults. No-op off glibc.
void retain_freed_memory();

}  // namespace gaze
