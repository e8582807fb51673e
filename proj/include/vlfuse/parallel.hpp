#pragma once

#include <cstddef>
#include <functional>

namespace vlfuse {

/// Environment variable that overrides the default worker count.
inline constexpr const char* kThreadsEnv = "VLFUSE_THREADS";

/// requested > 0 wins; otherwise VLFUSE_THREADS, otherwise the hardware concurrency.
std::size_t resolve_threads(std::size_t requested = 0);

/// Runs body(t) for every t in [0, tasks) on up to `threads` workers.
/// Tasks are claimed dynamically, so body must only write outputs owned by t.
/// The first exception thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t tasks, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace vlfuse
