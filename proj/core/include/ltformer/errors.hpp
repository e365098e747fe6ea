#pragma once

#include <stdexcept>
#include <string>

namespace ltformer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not satisfy an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Violated call preconditions (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A descriptor row whose norm is too small to normalize.
class DegenerateDescriptorError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A sampling window that leaves the source image.
class BorderError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class MatchingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ltformer
