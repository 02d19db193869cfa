#pragma once

#include <stdexcept>
#include <string>

namespace roboka {

// Base of everything the library throws. The CLI maps each subclass to an
// exit code via exit_code().
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

// Tensor dimensions disagree with a layer or with each other.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad argument value: empty sequence, non-finite scalar, N = 0, ...
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Anything wrong with a dataset, split, or checkpoint on disk.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class SplitError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalCheckError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace roboka
