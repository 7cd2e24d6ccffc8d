#pragma once

#include <stdexcept>
#include <string>

namespace mixpois {

/// Base class of every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI when it reports failures as JSON.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data_error"; }
};

class ParameterError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "parameter_error"; }
};

class SingularFit : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "singular_fit"; }
};

class NumericalBreakdown : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_breakdown"; }
};

class GridTooCoarse : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "grid_too_coarse"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

}  // namespace mixpois
