#pragma once

#include <stdexcept>
#include <string>

namespace podd {

/// Invalid geometry, configuration or input file contents. Raised before any
/// heavy compute starts; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure during a run (non-finite loss, unreadable artifact, I/O error).
/// The CLI maps it to exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace podd
