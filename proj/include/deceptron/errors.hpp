#pragma once

#include <stdexcept>
#include <string>

namespace deceptron {

/// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector/matrix dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Jacobian lacks full column rank.
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

/// A check's hypothesis does not hold; the check is inapplicable rather than failed.
class HypothesisViolation : public Error {
 public:
  using Error::Error;
};

/// A formula's precondition fails (e.g. break-even with C_base <= C_dipg).
class InapplicableError : public Error {
 public:
  using Error::Error;
};

/// Missing model files, unknown problem names and similar.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined for the given data (zero variance, constant ranks).
class UndefinedStatisticError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_arg(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError(what);
}

}  // namespace detail
}  // namespace deceptron
