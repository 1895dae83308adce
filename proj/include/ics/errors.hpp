#pragma once

#include <stdexcept>
#include <string>

namespace ics {

/// Bad input: wrong dimensions, out-of-range parameters, malformed matrices.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A symmetric matrix that was required to be positive semidefinite is not.
class NotPsdError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Integration or factorization produced non-finite values.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Monte Carlo run with too many divergent trials.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Internal bookkeeping mismatch (shapes, sparsity) that indicates a bug.
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ics
