#pragma once

#include <stdexcept>
#include <string>

namespace iretinex {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Axis or element index outside the valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition (non-scalar loss, non-positive divisor...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar parameter to an operation (stride 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or integer overflow.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (bad gamma, indivisible extents, unknown keys...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace iretinex
