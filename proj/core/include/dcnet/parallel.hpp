#pragma once

namespace dcnet {

/// Environment variable holding the worker-thread count.
inline constexpr const char* kThreadsEnv = "DCNET_THREADS";

/// Reads DCNET_THREADS (default: hardware concurrency) and applies it to the
/// matrix kernels. Results are bitwise reproducible for a fixed count.
/// Throws ConfigError on a malformed value.
int configure_threads();

/// Applies an explicit thread count (>= 1).
void set_threads(int count);
int thread_count();

}  // namespace dcnet
