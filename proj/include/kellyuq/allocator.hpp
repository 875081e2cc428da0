#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kellyuq/beliefs.hpp"

namespace kellyuq {

/// One betting opportunity: decimal odds per outcome and current wealth.
struct RaceInstance {
  Eigen::VectorXd odds;
  double wealth = 1.0;

  /// Throws Error(Domain) unless n >= 2, every O_h > 0 and wealth > 0.
  void validate() const;
};

struct SolveReport {
  int iterations = 0;
  double kkt_residual = 0.0;
  /// Scenario indices whose relaxation indicator z_s is set (dropped constraints).
  std::optional<std::vector<Eigen::Index>> active_scenarios;
  /// Epigraph value t for the chance-constrained variants.
  std::optional<double> t_value;
  /// Set when the chance-constrained feasible set has no interior and the
  /// always-feasible zero wager was returned instead.
  bool zero_fallback = false;
};

struct WagerAllocation {
  Eigen::VectorXd stakes;
  double objective = 0.0;
  SolveReport report;
};

enum class Variant { T, S, F, Elb, Emc, CC2, CCN, ECC2, ECCN };

std::string to_string(Variant v);
/// Throws Error(Input) for unknown names.
Variant variant_from_string(const std::string& name);

struct ModelSpec {
  Variant variant = Variant::S;
  double fraction = 0.5;        // F only
  double alpha = 0.1;           // chance-constrained variants
  Eigen::Index scenarios = 1000;
  Eigen::Index samples = 1000000;

  /// Throws Error(Domain) for out-of-range fields and Error(Shape) for a
  /// two-outcome variant used with n != 2.
  void validate(Eigen::Index outcomes) const;
};

/// sum_h pi_h log(x_h O_h + w - sum x).  Throws Error(Domain) when some
/// post-race wealth is not positive or stakes are infeasible.
double expected_log_wealth(const Eigen::VectorXd& stakes, const ProbVector& probs, const RaceInstance& race);

/// floor(count * alpha), robust to representation error in alpha.
Eigen::Index relaxation_budget(Eigen::Index count, double alpha);

WagerAllocation solve_standard(const ProbVector& probs, const RaceInstance& race);
WagerAllocation solve_fractional(const ProbVector& probs, const RaceInstance& race, double fraction);
WagerAllocation solve_elb(const ProbVector& lower_bounds, const RaceInstance& race);
WagerAllocation solve_cc2(const TiltedProbs& tilt, const RaceInstance& race);
WagerAllocation solve_ccn(const ScenarioSet& scenarios, const RaceInstance& race, double alpha);
WagerAllocation solve_ecc2(const ProbVector& mc, const TiltedProbs& tilt, const RaceInstance& race);
WagerAllocation solve_eccn(const ProbVector& mc, const ScenarioSet& scenarios, const RaceInstance& race,
                           double alpha);

/// Epigraph program max t s.t. t <= g_s(x) for every row not in `relaxed`.
/// Building block of solve_ccn, exposed for exact enumeration in tests.
WagerAllocation solve_scenario_epigraph(const Eigen::MatrixXd& scenario_probs, const RaceInstance& race,
                                        const std::vector<Eigen::Index>& relaxed = {});

/// Random-stream layout shared by the CLI and the experiment runner.
struct StreamPlan {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  RandomStream trial() const { return {seed, index}; }
  RandomStream monte_carlo() const { return {seed, index + (std::uint64_t{1} << 32)}; }
  RandomStream scenarios() const { return {seed, index + (std::uint64_t{1} << 33)}; }
};

/// Builds the probability objects a variant needs from the belief and
/// solves it.  Variant T is not available here (it needs true probabilities).
WagerAllocation allocate(const ModelSpec& spec, const BeliefState& belief, const RaceInstance& race,
                         const StreamPlan& streams);

}  // namespace kellyuq
