#pragma once

#include <stdexcept>
#include <string>

namespace cds {

enum class ErrorCode {
  invalid_argument,
  invalid_config,
  shape_mismatch,
  out_of_range,
  unknown_tap,
  unknown_vocabulary,
  backend_unavailable,
  numerical,
  io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when an optimization step produces a non-finite value.
class NumericalError : public Error {
 public:
  NumericalError(int step, int last_good_step, const std::string& what)
      : Error(ErrorCode::numerical, what), step_(step), last_good_step_(last_good_step) {}

  int step() const noexcept { return step_; }
  int last_good_step() const noexcept { return last_good_step_; }

 private:
  int step_;
  int last_good_step_;
};

}  // namespace cds
