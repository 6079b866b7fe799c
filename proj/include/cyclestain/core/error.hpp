#pragma once

#include <stdexcept>
#include <string>

namespace cyclestain {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller (bad shape, bad range tag, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Malformed or inconsistent input data (files, manifests, ratings).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite or undefined result.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cyclestain
