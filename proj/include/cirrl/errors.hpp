#pragma once

#include <stdexcept>
#include <string>

namespace cirrl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CIRRL_DEFINE_ERROR(Name) \
  class Name : public Error {    \
   public:                       \
    using Error::Error;          \
  }

CIRRL_DEFINE_ERROR(InvalidConfigError);
CIRRL_DEFINE_ERROR(ShapeError);
CIRRL_DEFINE_ERROR(NumericError);
CIRRL_DEFINE_ERROR(ContractError);
CIRRL_DEFINE_ERROR(DataError);
CIRRL_DEFINE_ERROR(GenerationError);
CIRRL_DEFINE_ERROR(DomainError);
CIRRL_DEFINE_ERROR(StepSizeError);
CIRRL_DEFINE_ERROR(IoError);

#undef CIRRL_DEFINE_ERROR

class RankDeficiencyError : public Error {
 public:
  RankDeficiencyError(const std::string& what, double smallest_singular_value)
      : Error(what), smallest_singular_value_(smallest_singular_value) {}
  double smallest_singular_value() const { return smallest_singular_value_; }

 private:
  double smallest_singular_value_;
};

/// Raised when a requested test perturbation has a non-PSD covariance.
class PerturbationTooStrongError : public Error {
 public:
  PerturbationTooStrongError(const std::string& what, double eigenvalue)
      : Error(what), eigenvalue_(eigenvalue) {}
  double eigenvalue() const { return eigenvalue_; }

 private:
  double eigenvalue_;
};

class DivergedTrainingError : public Error {
 public:
  DivergedTrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line) : Error(what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace cirrl
