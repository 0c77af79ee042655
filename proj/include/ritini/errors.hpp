#pragma once

#include <stdexcept>
#include <string>

namespace ritini {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizeMismatchError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A state or intermediate value became NaN/inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class BlowUpError : public NonFiniteError {
 public:
  using NonFiniteError::NonFiniteError;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class CollinearityError : public DegenerateDataError {
 public:
  using DegenerateDataError::DegenerateDataError;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ExtrapolationError : public Error {
 public:
  using Error::Error;
};

}  // namespace ritini
