#pragma once

#include <stdexcept>
#include <string>

namespace knit {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  Success = 0,
  InputError = 2,
  NumericalFailure = 3,
  IoFailure = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

/// Invalid arguments, violated preconditions, malformed input files.
class InputError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::InputError; }
};

/// A file that exists but does not parse: wrong magic, version, truncation.
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

/// Non-convergence, non-finite values, inconsistent covariance blocks.
class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::NumericalFailure; }
};

/// Operating-system level read/write failures.
class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::IoFailure; }
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

}  // namespace detail
}  // namespace knit
