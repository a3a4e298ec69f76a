#pragma once

#include <stdexcept>
#include <string>

namespace predft {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied inconsistent extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied a value outside an operation's contract (bad config,
/// out-of-range index, malformed file, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf or a factorization broke down.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace predft
