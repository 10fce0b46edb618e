#pragma once

#include <stdexcept>
#include <string>

namespace vxf {

// Exit-code aligned error categories used by the command line tool.
enum class ErrorKind : int {
  kUsage = 1,
  kData = 2,
  kNumeric = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Invalid configuration or arguments supplied by the caller.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message)
      : Error(ErrorKind::kUsage, message) {}
};

/// Malformed files, shape mismatches and other data problems.
class DataError : public Error {
 public:
  explicit DataError(const std::string& message)
      : Error(ErrorKind::kData, message) {}
};

class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& message) : DataError(message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message)
      : Error(ErrorKind::kNumeric, message) {}
};

int exit_code(const Error& error) noexcept;

}  // namespace vxf
