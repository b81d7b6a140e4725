#pragma once

#include <stdexcept>
#include <string>

namespace kavan {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or sizes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf reached an operation that requires finite input.
class NumericInputError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation precondition (bad index, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Inconsistent model, run or file configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class NumericAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace kavan
