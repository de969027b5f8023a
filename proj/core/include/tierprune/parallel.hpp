#pragma once

#include <cstddef>
#include <functional>

namespace tierprune {

/// Thread cap from TIERPRUNE_THREADS, or hardware_concurrency() when unset or
/// invalid. Always at least 1.
std::size_t thread_limit();

/// Runs fn(worker, index) for every index in [0, count) on up to `threads`
/// workers pulling indices from a shared counter. Worker ids are dense in
/// [0, threads). The first exception thrown by fn is rethrown after all
/// workers stop.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t worker, std::size_t index)>& fn);

}  // namespace tierprune
