#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fer {

// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Class index outside the active label space.
class LabelError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable dataset input.
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameters during training.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int epoch, int batch)
      : Error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

// Corrupt, truncated or version-mismatched checkpoint.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::size_t offset)
      : Error(what + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Undecodable user-supplied input (e.g. an image given to predict).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace fer
