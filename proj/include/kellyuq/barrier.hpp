#pragma once

#include <functional>
#include <optional>

#include <Eigen/Dense>

namespace kellyuq {

/// Smooth concave function of the stake vector.  `value` may return a
/// non-finite number outside its domain; `derivatives` fills gradient and
/// Hessian (both sized by the caller's stake dimension).
struct ConcaveObjective {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)> derivatives;
};

/// sum_h probs_h log(x_h O_h + w - sum x) + residual * log(w - sum x).
ConcaveObjective log_wealth_objective(Eigen::VectorXd probs, double residual_mass,
                                      Eigen::VectorXd odds, double wealth);

/// coeffs' x.
ConcaveObjective linear_objective(Eigen::VectorXd coeffs);

/// Program over stakes x in the Kelly feasible set {x >= 0, sum x <= w}.
///
/// Each row P_s of `constraints` defines g_s(x) = sum_h P_sh log W_h(x)
/// with W_h(x) = x_h O_h + w - sum x.  Without an objective the program is
/// the epigraph form  max t  s.t.  g_s(x) >= t;  with one, it is
/// max objective(x)  s.t.  g_s(x) >= rhs.
struct ConcaveProgram {
  Eigen::VectorXd odds;
  double wealth = 1.0;
  std::optional<ConcaveObjective> objective;
  Eigen::MatrixXd constraints;
  double rhs = 0.0;
  std::optional<Eigen::VectorXd> start;  // strictly feasible x; required for fixed-rhs constraints
};

struct BarrierOptions {
  double mu_start = 1e-2;
  double mu_end = 1e-10;
  double mu_factor = 0.2;
  int max_iterations = 500;
  double wealth_margin = 1e-12;  // relative to wealth
  /// Epigraph programs only: return at the first iterate whose t exceeds
  /// this value.
  std::optional<double> stop_when_t_above;
};

struct ConcaveSolution {
  Eigen::VectorXd x;
  double t = 0.0;          // epigraph value; min_s g_s(x) for epigraph programs
  double value = 0.0;      // objective(x), or t for epigraph programs
  int iterations = 0;      // Newton steps over all centering stages
  Eigen::VectorXd multipliers;  // one per constraint row
  double kkt_residual = 0.0;
  bool stopped_early = false;
};

/// Log-barrier interior-point ascent with Newton centering.
///
/// Throws IterateError(NonConvergence) at the iteration cap and
/// Error(Solver) when no strictly feasible start exists or the Newton
/// system breaks down.
ConcaveSolution maximize_concave(const ConcaveProgram& program, const BarrierOptions& options = {});

/// KKT residual of `program` at x for the given constraint multipliers.
/// Bound constraints enter through min(x_h, -dL/dx_h); for epigraph
/// programs t is taken as min_s g_s(x).
double kkt_residual(const ConcaveProgram& program, const Eigen::VectorXd& x, const Eigen::VectorXd& multipliers);

/// Value of every constraint row at x: P * log W(x).
Eigen::VectorXd constraint_values(const Eigen::MatrixXd& constraints, const Eigen::VectorXd& odds,
                                  double wealth, const Eigen::VectorXd& x);

}  // namespace kellyuq
