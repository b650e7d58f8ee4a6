#pragma once

#include <stdexcept>
#include <string>

namespace tomo {

enum class ErrorCode {
  invalid_argument = 1,
  index = 2,
  shape = 3,
  numeric = 4,
  config = 5,
  io = 6,
  fixer = 7,
  protocol = 8,
};

const char* error_code_name(ErrorCode code) noexcept;

// Every failure raised by the core carries one of the codes above so the
// C API can forward it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace tomo
