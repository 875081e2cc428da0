#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kellyuq/allocator.hpp"
#include "kellyuq/stochastics.hpp"

namespace kellyuq {

/// One simulated experiment: `trials` independent races with n outcomes,
/// all paying the same decimal odds.
struct ExperimentConfig {
  std::string name;
  Eigen::Index n = 2;
  double odds = 2.0;
  Eigen::Index m = 10;
  Eigen::Index trials = 2500;
  std::vector<double> alphas{0.4, 0.25, 0.1};
  Eigen::Index samples = 1000000;   // Monte Carlo draws for pi^mc
  Eigen::Index scenarios = 1000;    // scenario count for CCN / ECCN
  double fraction = 0.5;
  std::uint64_t seed = 0;
  /// Force every coefficient standard deviation to zero.
  bool zero_uncertainty = false;

  void validate() const;
};

struct TrialData {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd cov;        // diagonal
  Eigen::VectorXd beta_true;
  Eigen::MatrixXd factors;    // n x m, row h = factor vector of runner h
  Eigen::VectorXd true_probs;
};

/// Draw order from the stream: beta_hat (m normals), sigma fractions
/// (m uniforms), beta_true noise (m normals), F (m x n uniforms, row-major).
TrialData gen_trial(const ExperimentConfig& config, RandomStream& stream);

/// Standard deviation cap for a coefficient: |beta| / -Phi^-1(0.025).
double sigma_cap(double beta_hat_component);

/// sum_h pi^t_h log(W_h / w).
double expected_log_return(const WagerAllocation& wager, const Eigen::VectorXd& true_probs,
                           const RaceInstance& race);

/// Row label of the results table; alpha is set for CCx / ECCx rows.
struct ModelRow {
  std::string model;
  std::optional<double> alpha;
};

/// T, S, F, Elb, Emc, CCx per alpha, ECCx per alpha.
std::vector<ModelRow> model_rows(const std::vector<double>& alphas);

struct TrialEvaluation {
  TrialData data;
  std::vector<WagerAllocation> wagers;  // aligned with model_rows
  std::vector<double> returns;
};

/// Evaluates every model on trial `index`.  Solver failures are rethrown
/// as Error(Solver) naming the trial and the model.
TrialEvaluation evaluate_trial(const ExperimentConfig& config, Eigen::Index index);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ModelRow> rows;
  Eigen::VectorXd totals;            // per row, summed in trial order
  Eigen::MatrixXd per_trial;         // trials x rows
};

/// Runs all trials on `threads` workers; output does not depend on the
/// worker count.
ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads = 1);

struct ResultsTable {
  std::vector<ModelRow> rows;
  std::vector<ExperimentConfig> experiments;
  Eigen::MatrixXd totals;   // rows x experiments
  Eigen::VectorXd sum;      // per row, independent of experiment order
  double runtime_seconds = 0.0;

  Eigen::Index row_index(const std::string& model, std::optional<double> alpha = std::nullopt) const;
};

/// All configs must share the same alpha list.
ResultsTable run_suite(const std::vector<ExperimentConfig>& configs, unsigned threads = 1);

std::string results_csv(const ResultsTable& table);
std::string results_json(const ResultsTable& table);

}  // namespace kellyuq
