#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace kellyuq {

enum class ErrorKind {
  Domain,             // argument outside its mathematical domain
  Shape,              // dimension mismatch between inputs
  Matrix,             // covariance not symmetric / not factorizable
  Separation,         // MLE diverges on separated data
  NonConvergence,     // iterative method hit its cap
  SingularInformation,
  Solver,             // allocation program could not be solved
  Input,              // malformed file or configuration
};

const char* to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Iterative method failed; carries the best point found so far.
class IterateError : public Error {
 public:
  IterateError(ErrorKind kind, const std::string& what, Eigen::VectorXd best)
      : Error(kind, what), best_(std::move(best)) {}

  const Eigen::VectorXd& best_iterate() const noexcept { return best_; }

 private:
  Eigen::VectorXd best_;
};

}  // namespace kellyuq
