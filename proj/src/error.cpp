#include "hrank/error.hpp"

namespace hrank {

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::state: return "state";
    case ErrorKind::config: return "config";
    case ErrorKind::usage: return "usage";
    case ErrorKind::format: return "format";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::data: return "data";
    case ErrorKind::consistency: return "consistency";
    case ErrorKind::plan: return "plan";
    case ErrorKind::diverged: return "diverged";
  }
  return "unknown";
}

}  // namespace hrank
