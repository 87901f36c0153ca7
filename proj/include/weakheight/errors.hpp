#pragma once

#include <stdexcept>
#include <string>

namespace weakheight {

// Error families map onto CLI exit codes (see tools/weakheight.cpp).

/// Invalid user-supplied configuration or parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing or invariant-violating data on disk or in memory.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container bytes that do not follow the on-disk layout.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values produced during optimisation.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string component, const std::string& what)
      : std::runtime_error(what), component_(std::move(component)) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

}  // namespace weakheight
