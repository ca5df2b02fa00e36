#include "tmeseg/parallel.hpp"

#include <cstdlib>
#include <string>

#include "tmeseg/error.hpp"

namespace tmeseg {

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TMESEG_WORKERS"); env != nullptr && *env != '\0') {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw usage_error(std::string("TMESEG_WORKERS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

}  // namespace tmeseg
