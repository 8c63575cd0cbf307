#pragma once

#include <stdexcept>
#include <string>

namespace noisyforge {

// Base of every error raised by the library. The CLI maps subclasses onto
// stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its contract (bad argument, empty input).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Data values that violate an operation's domain, e.g. out-of-range labels.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible on-disk data (datasets, checkpoints, curves).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration. `field` is the dotted path of the
// offending key, e.g. "schedule.theta".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A required input artifact does not exist.
class MissingPrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace noisyforge
