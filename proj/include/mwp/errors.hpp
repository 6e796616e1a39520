#pragma once

#include <stdexcept>
#include <string>

namespace mwp {

// Error taxonomy mapped onto process exit codes by the CLI:
//   ValidationError (and subclasses) -> 1, IoError -> 2, NumericError -> 3.

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};

struct DomainError : ValidationError {
  using ValidationError::ValidationError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(const std::exception& e);

}  // namespace mwp
