#pragma once

#include <stdexcept>
#include <string>

namespace poserec {

// Error taxonomy mirrors the CLI exit codes: usage -> 1, data -> 2, numeric -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed flags, unknown subcommand/protocol, inconsistent options.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad input files, shape/format violations, broken referential integrity.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor dimension mismatches. Treated as a data problem at the CLI boundary.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

// Degenerate vectors, divergence, failed gradient checks, non-determinism.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace poserec
