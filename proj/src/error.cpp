#include "tomoforge/error.hpp"

namespace tomo {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::index: return "index error";
    case ErrorCode::shape: return "shape error";
    case ErrorCode::numeric: return "numeric error";
    case ErrorCode::config: return "config error";
    case ErrorCode::io: return "io error";
    case ErrorCode::fixer: return "fixer error";
    case ErrorCode::protocol: return "protocol error";
  }
  return "unknown error";
}

}  // namespace tomo
