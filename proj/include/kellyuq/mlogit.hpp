#pragma once

#include <vector>

#include <Eigen/Dense>

namespace kellyuq {

/// One historical race: a row of factor values per runner and the index
/// (0-based) of the winner.
struct RaceRecord {
  Eigen::MatrixXd factors;  // n_r x m
  Eigen::Index winner = 0;
};

/// A collection of races sharing the factor dimension m.
class RaceHistory {
 public:
  RaceHistory() = default;
  explicit RaceHistory(std::vector<RaceRecord> races);

  const std::vector<RaceRecord>& races() const noexcept { return races_; }
  Eigen::Index dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return races_.size(); }

 private:
  std::vector<RaceRecord> races_;
  Eigen::Index dim_ = 0;
};

struct FittedModel {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd curvature;  // observed information I(beta_hat)
  Eigen::MatrixXd score_var;  // V(beta_hat), outer products of per-race scores
  Eigen::MatrixXd sandwich;   // I^-1 V I^-1
  bool converged = false;
  double grad_norm = 0.0;     // sup-norm of the score at beta_hat
  int iterations = 0;
  double log_likelihood = 0.0;
};

double log_likelihood(const Eigen::VectorXd& beta, const RaceHistory& history);
Eigen::VectorXd score(const Eigen::VectorXd& beta, const RaceHistory& history);
Eigen::MatrixXd neg_hessian(const Eigen::VectorXd& beta, const RaceHistory& history);

/// Score of a single race.
Eigen::VectorXd race_score(const Eigen::VectorXd& beta, const RaceRecord& race);

struct SandwichParts {
  Eigen::MatrixXd score_var;
  Eigen::MatrixXd sandwich;
};

/// Throws Error(SingularInformation) when the curvature cannot be factored.
SandwichParts sandwich_covariance(const Eigen::VectorXd& beta_hat, const RaceHistory& history);

struct FitOptions {
  double grad_tol = 1e-8;
  double step_tol = 1e-6;        // Newton step must also have collapsed
  int max_iterations = 100;
  double separation_bound = 50.0;
  double armijo = 1e-4;
};

/// Damped Newton MLE from beta = 0.
///
/// Throws Error(Separation) when |beta|_inf exceeds the separation bound,
/// and IterateError(NonConvergence) (carrying the best iterate) at the iteration cap.
FittedModel fit_mle(const RaceHistory& history, const FitOptions& options = {});

}  // namespace kellyuq
