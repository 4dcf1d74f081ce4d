#pragma once

#include <cstddef>
#include <functional>

namespace impulse {

/// Worker cap: IMPULSE_THREADS when set to a positive integer, otherwise the
/// hardware concurrency.
std::size_t thread_limit();

/// Runs body(i) for i in [0, count). Each index writes only its own result
/// slot, so output never depends on scheduling. If several bodies throw, the
/// exception of the lowest index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace impulse
