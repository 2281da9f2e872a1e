#pragma once

#include <stdexcept>
#include <string>

namespace bilm {

// Base of every error raised by the toolkit. The CLI maps each subclass to
// an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed, divergence, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad input data: empty corpora, over-long sentences, unknown words.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed files (ARPA, model containers, decoy files).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace bilm
