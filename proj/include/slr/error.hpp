#pragma once

#include <stdexcept>
#include <string>

namespace slr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents or ranks do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A kernel or recorded op produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied input (config, flags, manifest, spec string) is invalid.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// On-disk data could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A sequence file was written against a different skeleton layout.
class LayoutSkewError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace slr
