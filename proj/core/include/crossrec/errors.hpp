#pragma once

#include <stdexcept>
#include <string>

namespace crossrec {

// Error families map onto distinct CLI exit codes, see cli.hpp.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, shape mismatches and other numeric contract violations.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : NumericError {
  using NumericError::NumericError;
};

// Failed self-checks: gradient checks, mask leakage, op-count accounting.
struct CheckError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace crossrec
