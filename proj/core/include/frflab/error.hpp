#pragma once

#include <stdexcept>
#include <string>

namespace frflab {

/// Precondition violated by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A local model has at least as many parameters as the window has bins.
class OrderTooLarge : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Factorization or simulation failure that is not the caller's fault.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every empirical-Bayes start failed to produce a finite objective.
class TuningFailed : public std::runtime_error {
 public:
  TuningFailed(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}

  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

}  // namespace frflab
