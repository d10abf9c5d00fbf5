#pragma once

#include <stdexcept>

namespace posedistill {

/// Invalid or inconsistent user configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Artifacts that are individually well-formed but do not fit together
/// (checkpoint topology vs dataset resolution, wrong model kind, ...).
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace posedistill
