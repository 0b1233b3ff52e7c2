#pragma once

#include <stdexcept>
#include <string>

namespace ddrnet {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or graph shapes disagree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its admissible range (negative variance, bad label...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A variant name that the model zoo does not know.
class UnknownVariantError : public ValueError {
 public:
  using ValueError::ValueError;
};

}  // namespace ddrnet
