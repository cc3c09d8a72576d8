#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fusionflow {

/// Base class for all library errors. `exit_code()` is what the CLI returns.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad arguments, shapes, or configuration values.
class InvalidInput : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Operation not allowed in the object's current state (e.g. a second backward pass).
class InvalidState : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed binary or text file. Carries the byte offset at which decoding failed.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }
  int exit_code() const noexcept override { return 2; }

private:
  std::uint64_t offset_;
};

/// NaN/Inf encountered during training or evaluation.
class NumericalError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class IoError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace fusionflow
