#pragma once

#include <stdexcept>
#include <string>

namespace bddm {

/// Invalid configuration: dimension mismatches, malformed files, bad parameters.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// The denoiser kind does not support the requested evaluation.
class UnsupportedOperation : public std::logic_error {
 public:
  explicit UnsupportedOperation(const std::string& what) : std::logic_error(what) {}
};

/// Problem size exceeds what the exact solvers are allowed to handle.
class UnsupportedSize : public std::length_error {
 public:
  explicit UnsupportedSize(const std::string& what) : std::length_error(what) {}
};

/// A computation produced non-finite values (e.g. diverging training).
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bddm
