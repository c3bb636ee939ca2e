#include "dcnet/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <string>
#include <thread>

#include <Eigen/Core>
#ifdef DCNET_HAVE_OPENMP
#include <omp.h>
#endif

#include "dcnet/errors.hpp"

namespace dcnet {

int configure_threads() {
  int count = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv(kThreadsEnv); env && *env) {
    int v = 0;
    const char* end = env + std::strlen(env);
    auto [ptr, ec] = std::from_chars(env, end, v);
    if (ec != std::errc() || ptr != end || v < 1) {
      throw ConfigError(std::string(kThreadsEnv) + " must be a positive integer, got '" + env + "'");
    }
    count = v;
  }
  set_threads(count);
  return count;
}

void set_threads(int count) {
  if (count < 1) throw ConfigError("thread count must be >= 1");
  Eigen::setNbThreads(count);
#ifdef DCNET_HAVE_OPENMP
  omp_set_num_threads(count);
#endif
}

int thread_count() {
  return Eigen::nbThreads();
}

}  // namespace dcnet
