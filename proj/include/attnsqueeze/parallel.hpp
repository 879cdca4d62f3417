#pragma once

#include <cstddef>
#include <functional>

namespace attnsqueeze {

// Upper bound on worker threads. Initialized from ATTNSQUEEZE_THREADS
// (0 or unset = hardware concurrency).
std::size_t max_threads() noexcept;
void set_max_threads(std::size_t threads) noexcept;

// Runs fn(i) for i in [0, count). Each index is handled exactly once; if any
// calls throw, the exception from the lowest index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace attnsqueeze
