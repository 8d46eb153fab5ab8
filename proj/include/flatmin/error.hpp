#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace flatmin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or malformed configuration.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A function evaluation produced a non-finite value.
class NonFiniteValue : public Error {
 public:
  NonFiniteValue(const std::string& what, Eigen::VectorXd probe)
      : Error(what), probe_(std::move(probe)) {}
  const Eigen::VectorXd& probe() const noexcept { return probe_; }

 private:
  Eigen::VectorXd probe_;
};

/// The gradient flow did not reach its stopping tolerance within budget.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, Eigen::VectorXd last, double grad_norm)
      : Error(what), last_(std::move(last)), grad_norm_(grad_norm) {}
  const Eigen::VectorXd& last_iterate() const noexcept { return last_; }
  double grad_norm() const noexcept { return grad_norm_; }

 private:
  Eigen::VectorXd last_;
  double grad_norm_;
};

/// Sharpness-aware step could not find a usable per-sample direction.
class DegenerateSample : public Error {
 public:
  using Error::Error;
};

/// Post-run gradient descent refinement ran out of budget.
class RefinementError : public Error {
 public:
  using Error::Error;
};

}  // namespace flatmin
