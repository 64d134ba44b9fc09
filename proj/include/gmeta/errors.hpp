#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gmeta {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rank-deficient design, singular Hessian, or a moment Jacobian without full
/// column rank.
class IdentifiabilityError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure ran out of iterations. Carries the last iterate and
/// whatever objective trace was recorded.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, Eigen::VectorXd last_iterate,
                   std::vector<double> trace = {})
      : Error(what), last_iterate_(std::move(last_iterate)), trace_(std::move(trace)) {}

  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }
  const std::vector<double>& objective_trace() const noexcept { return trace_; }

 private:
  Eigen::VectorXd last_iterate_;
  std::vector<double> trace_;
};

/// Logistic coefficients diverging (complete or quasi-complete separation).
class SeparationError : public Error {
 public:
  using Error::Error;
};

class DispersionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFamilyError : public Error {
 public:
  using Error::Error;
};

class MissingCovarianceError : public Error {
 public:
  using Error::Error;
};

/// A study covariance that cannot be inverted reliably.
class SingularCovarianceError : public Error {
 public:
  SingularCovarianceError(const std::string& what, std::size_t study)
      : Error(what), study_(study) {}
  std::size_t study() const noexcept { return study_; }

 private:
  std::size_t study_;
};

class CorrelationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files, configuration, or arguments.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Dimension mismatches and other contract violations by the caller.
class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace gmeta
