// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nasmc {

/// Bad argument or shape mismatch.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation called in the wrong state (backward before forward, etc).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The model or proposal does not support the requested operation.
class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite or otherwise broken numerics.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every particle has zero weight at step `t` (1-based).
class DegenerateWeightsError : public NumericalError {
 public:
  explicit DegenerateWeightsError(int t)
      : NumericalError("degenerate importance weights at t=" + std::to_string(t)),
        t_(t) {}
  int step() const noexcept { return t_; }

 private:
  int t_;
};

}  // namespace nasmc
