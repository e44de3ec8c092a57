#include "segx/parallel.hpp"

#include <cstdlib>

namespace segx {

int default_workers() {
  if (const char* env = std::getenv("SEGX_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

}  // namespace segx
