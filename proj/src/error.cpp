#include "slotflow/error.hpp"

namespace slotflow {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Config: return "config";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Load: return "load";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Stage: return "stage";
  }
  return "unknown";
}

}  // namespace slotflow
