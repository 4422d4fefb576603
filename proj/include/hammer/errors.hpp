#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace hammer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the arguments of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (tensor container, manifest, sidecar).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// File system failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingParameterError : public Error {
 public:
  MissingParameterError(std::string name, const std::string& what)
      : Error(what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Checkpoint and dataset disagree on the affordance vocabulary.
class VocabularyMismatch : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail
}  // namespace hammer
