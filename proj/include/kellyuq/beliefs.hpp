#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "kellyuq/stochastics.hpp"

namespace kellyuq {

/// Gaussian coefficient belief beta ~ N(beta_hat, cov) attached to the
/// factor matrix of one race (row h = factor vector of runner h).
class BeliefState {
 public:
  BeliefState(Eigen::VectorXd beta_hat, Eigen::MatrixXd cov, Eigen::MatrixXd factors);

  const Eigen::VectorXd& beta_hat() const noexcept { return beta_hat_; }
  const Eigen::MatrixXd& cov() const noexcept { return cov_; }
  const Eigen::MatrixXd& factors() const noexcept { return factors_; }
  Eigen::Index outcomes() const noexcept { return factors_.rows(); }

  /// beta_hat' v_h for every runner.
  Eigen::VectorXd utilities() const { return factors_ * beta_hat_; }

 private:
  Eigen::VectorXd beta_hat_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd factors_;
};

enum class ProbKind { Point, MonteCarlo, JensenLowerBound, Given };

struct ProbVector {
  Eigen::VectorXd probs;
  ProbKind kind = ProbKind::Given;
  std::optional<Eigen::VectorXd> mc_std_err;

  Eigen::Index size() const noexcept { return probs.size(); }
  double total() const { return probs.sum(); }
};

/// Wraps caller-supplied probabilities (e.g. true probabilities).
ProbVector given_probs(Eigen::VectorXd probs);

/// Two-outcome probabilities tilted by the normal quantile of the utility
/// difference.  h1/l2 share a denominator, as do l1/h2.
struct TiltedProbs {
  double pi_h1 = 0.5;
  double pi_l2 = 0.5;
  double pi_l1 = 0.5;
  double pi_h2 = 0.5;
  double sigma = 0.0;
  double alpha = 0.0;
};

struct ScenarioSet {
  Eigen::MatrixXd scenarios;  // S x n, each row a probability vector
  std::uint64_t seed = 0;
  std::uint64_t substream = 0;

  Eigen::Index count() const noexcept { return scenarios.rows(); }
};

/// Softmax with max-shift; entries clamped below at 1e-300.
Eigen::VectorXd softmax(const Eigen::VectorXd& utilities);

ProbVector point_probs(const BeliefState& belief);

/// Monte Carlo mean of softmax(beta' v) over `samples` draws of beta,
/// accumulated in one pass (Welford).  Uses the same stream layout as
/// sample_scenarios.
ProbVector mc_probs(const BeliefState& belief, Eigen::Index samples, RandomStream& stream);

/// Jensen lower bound on E[pi_h] from the normal moment generating function.
ProbVector jensen_lb(const BeliefState& belief);

/// Requires two outcomes and 0 < alpha < 0.5.
TiltedProbs cc2_tilt(const BeliefState& belief, double alpha);

ScenarioSet sample_scenarios(const BeliefState& belief, Eigen::Index count, RandomStream& stream);

}  // namespace kellyuq
