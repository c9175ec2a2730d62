#pragma once

#include <stdexcept>
#include <string>

namespace tsrd {

/// Bad or inconsistent configuration (grids, specs, files).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Argument outside the documented domain of an operation.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A solver failed to converge or a step could not be completed.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tsrd
