#pragma once

#include <stdexcept>
#include <string>

namespace ardsparse {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or encountered, or a numerical routine failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Every weight was trimmed; compression is undefined.
class DegenerateNetworkError : public Error {
 public:
  using Error::Error;
};

}  // namespace ardsparse
