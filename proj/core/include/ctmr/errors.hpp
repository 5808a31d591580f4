#pragma once

#include <stdexcept>
#include <string>

namespace ctmr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor geometry or channel-count mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value outside its documented domain (negative stride, dropout rate >= 1, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Binary container errors. Each failure mode has its own type so callers
// (and tests) can tell a corrupted header from a short read.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DtypeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DimensionOverflowError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TrailingDataError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DuplicateNameError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Parameter names/shapes in a checkpoint do not match the model being loaded.
class SchemaError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace ctmr
