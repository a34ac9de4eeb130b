#pragma once

#include <stdexcept>
#include <string>

namespace ditf {

// Values are shared with the C API (ditf_status in ditf.h); keep them in sync.
enum class ErrorCode : int {
  ok = 0,
  invalid_argument = 1,
  io = 2,
  bad_magic = 3,
  unsupported_version = 4,
  unsupported_dtype = 5,
  truncated = 6,
  non_finite = 7,
  duplicate_name = 8,
  malformed = 9,
  shape_mismatch = 10,
  degenerate_median = 11,
  degenerate_covariance = 12,
  not_found = 13,
  stage_mismatch = 14,
  internal = 15,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace ditf
