#pragma once

#include <cstddef>
#include <functional>

namespace jarvis {

/// Worker count from JARVIS_THREADS, defaulting to 1.
int default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one call; results must be written to per-index slots.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace jarvis
