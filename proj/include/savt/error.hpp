#pragma once

#include <stdexcept>
#include <string>

namespace savt {

// Shape or dimension mismatch between tensor arguments.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad input values: off-simplex rows, malformed annotations or targets.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File and container problems: magic, version, manifest, truncation.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric failures: probe divergence, degenerate rank, solver inconsistency.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace savt
