#pragma once

#include <stdexcept>
#include <string>

namespace irdfusion {

/// Violated precondition on a public operation (bad argument, bad config).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand extents do not fit the operation.
class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A kernel produced NaN or Inf from finite inputs.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A numerical check (identity, gradient) exceeded its tolerance.
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-system or format failure; message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace irdfusion
