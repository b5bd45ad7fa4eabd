#pragma once

#include <stdexcept>
#include <string>

namespace deeptruck {

enum class ErrorKind {
  InvalidInput,
  Parse,
  Shape,
  Divergence,
  Io,
  Resolution,
  Stage,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Shape: return "shape mismatch";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Resolution: return "resolution error";
    case ErrorKind::Stage: return "stage failed";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by closed-loop rollouts when the state or output stops being finite.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error(ErrorKind::Divergence, what + " at step " + std::to_string(step)), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace deeptruck
