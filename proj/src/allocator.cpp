#include "kellyuq/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kellyuq/barrier.hpp"
#include "kellyuq/error.hpp"

namespace kellyuq {

void RaceInstance::validate() const {
  if (odds.size() < 2) throw Error(ErrorKind::Domain, "race needs at least two outcomes");
  if (!odds.allFinite() || (odds.array() <= 0.0).any())
    throw Error(ErrorKind::Domain, "decimal odds must be positive and finite");
  if (!(wealth > 0.0) || !std::isfinite(wealth)) throw Error(ErrorKind::Domain, "wealth must be positive");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::T: return "T";
    case Variant::S: return "S";
    case Variant::F: return "F";
    case Variant::Elb: return "Elb";
    case Variant::Emc: return "Emc";
    case Variant::CC2: return "CC2";
    case Variant::CCN: return "CCN";
    case Variant::ECC2: return "ECC2";
    case Variant::ECCN: return "ECCN";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : {Variant::T, Variant::S, Variant::F, Variant::Elb, Variant::Emc, Variant::CC2,
                    Variant::CCN, Variant::ECC2, Variant::ECCN}) {
    if (to_string(v) == name) return v;
  }
  throw Error(ErrorKind::Input, "unknown model variant '" + name + "'");
}

void ModelSpec::validate(Eigen::Index outcomes) const {
  const bool chance = variant == Variant::CC2 || variant == Variant::CCN || variant == Variant::ECC2 ||
                      variant == Variant::ECCN;
  if (variant == Variant::F && !(fraction > 0.0 && fraction <= 1.0))
    throw Error(ErrorKind::Domain, "fraction must lie in (0, 1]");
  if (chance && !(alpha > 0.0 && alpha < 0.5))
    throw Error(ErrorKind::Domain, "alpha must lie in (0, 0.5) for chance-constrained variants");
  if ((variant == Variant::CC2 || variant == Variant::ECC2) && outcomes != 2)
    throw Error(ErrorKind::Shape, to_string(variant) + " requires exactly two outcomes");
  if (scenarios < 1 || samples < 1) throw Error(ErrorKind::Domain, "sample counts must be positive");
}

double expected_log_wealth(const Eigen::VectorXd& stakes, const ProbVector& probs, const RaceInstance& race) {
  const Eigen::Index n = race.odds.size();
  if (stakes.size() != n || probs.size() != n)
    throw Error(ErrorKind::Shape, "stakes, probabilities and odds must have equal length");
  if ((stakes.array() < 0.0).any()) throw Error(ErrorKind::Domain, "stakes must be nonnegative");
  if (stakes.sum() > race.wealth * (1.0 + 1e-12)) throw Error(ErrorKind::Domain, "stakes exceed wealth");
  const Eigen::ArrayXd after = race.odds.array() * stakes.array() + (race.wealth - stakes.sum());
  if ((after <= 0.0).any()) throw Error(ErrorKind::Domain, "post-race wealth is not positive in some outcome");
  return (probs.probs.array() * after.log()).sum();
}

Eigen::Index relaxation_budget(Eigen::Index count, double alpha) {
  return static_cast<Eigen::Index>(std::floor(static_cast<double>(count) * alpha + 1e-9));
}

namespace {

constexpr double kSnapThreshold = 1e-7;  // relative to wealth

void check_probs(const ProbVector& probs, const RaceInstance& race) {
  race.validate();
  if (probs.size() != race.odds.size())
    throw Error(ErrorKind::Shape, "probability vector length differs from number of outcomes");
  if (!probs.probs.allFinite() || (probs.probs.array() < 0.0).any())
    throw Error(ErrorKind::Domain, "probabilities must be finite and nonnegative");
}

void require_two(const RaceInstance& race, const char* who) {
  race.validate();
  if (race.odds.size() != 2) throw Error(ErrorKind::Shape, std::string(who) + " requires exactly two outcomes");
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw Error(ErrorKind::Domain, "alpha must lie in (0, 0.5)");
}

// Runs the barrier solver at unit wealth; failures become Solver errors
// carrying the best iterate in the caller's wealth units.
ConcaveSolution run(const ConcaveProgram& program, double wealth, const std::string& stage,
                    const BarrierOptions& options = {}) {
  try {
    return maximize_concave(program, options);
  } catch (const IterateError& e) {
    throw IterateError(ErrorKind::Solver, stage + ": " + e.what(), e.best_iterate() * wealth);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Solver || e.kind() == ErrorKind::NonConvergence)
      throw Error(ErrorKind::Solver, stage + ": " + e.what());
    throw;
  }
}

Eigen::VectorXd snapped(const Eigen::VectorXd& x) {
  return (x.array() <= kSnapThreshold).select(0.0, x);
}

// x moved onto the face sum x = 1 when it is within the snap threshold of it.
std::optional<Eigen::VectorXd> on_budget(const Eigen::VectorXd& x) {
  const double total = x.sum();
  if (!(total > 0.0) || 1.0 - total > kSnapThreshold) return std::nullopt;
  Eigen::VectorXd c = x / total;
  Eigen::Index top = 0;
  c.maxCoeff(&top);
  while (c.sum() > 1.0) c[top] = std::nextafter(c[top], 0.0);
  return c;
}

std::vector<Eigen::VectorXd> candidates(const Eigen::VectorXd& x) {
  std::vector<Eigen::VectorXd> out{snapped(x)};
  if (auto face = on_budget(out.front())) out.push_back(std::move(*face));
  out.push_back(Eigen::VectorXd::Zero(x.size()));
  return out;
}

// The barrier iterate never reaches the boundary; replace near-zero stakes
// by exact zeros when that is at least as good and still feasible.  The zero
// wager is feasible for every program here, so it is also a fallback.
Eigen::VectorXd polish_objective(const Eigen::VectorXd& x, const ConcaveObjective& f,
                                 const Eigen::MatrixXd& rows, const Eigen::VectorXd& odds) {
  const auto feasible = [&](const Eigen::VectorXd& c) {
    return rows.rows() == 0 || constraint_values(rows, odds, 1.0, c).minCoeff() >= 0.0;
  };
  Eigen::VectorXd best = x;
  double best_val = f.value(x);
  for (const Eigen::VectorXd& c : candidates(x)) {
    if (c == best) continue;
    const double v = f.value(c);
    if (v >= best_val && feasible(c)) {
      best = c;
      best_val = v;
    }
  }
  return best;
}

// Newton steps on the objective alone over the stakes left positive.  The
// barrier optimum is only accurate to about its final mu; these steps bring
// the free coordinates to a stationary point.  When the whole wealth is
// staked the steps stay on the face sum x = 1.
Eigen::VectorXd newton_on_support(Eigen::VectorXd x, const ConcaveObjective& f) {
  std::vector<Eigen::Index> free;
  for (Eigen::Index h = 0; h < x.size(); ++h)
    if (x[h] > 0.0) free.push_back(h);
  if (free.empty()) return x;
  const auto k = static_cast<Eigen::Index>(free.size());
  const bool face = 1.0 - x.sum() <= 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  double value = f.value(x);

  // Gradient on the free coordinates, projected onto the face when on it.
  const auto reduced = [&](const Eigen::VectorXd& at, Eigen::VectorXd& g, Eigen::MatrixXd& h) {
    f.derivatives(at, grad, hess);
    g = grad(free);
    h.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        h(i, j) = -hess(free[static_cast<std::size_t>(i)], free[static_cast<std::size_t>(j)]);
  };
  const auto projected_norm = [&](const Eigen::VectorXd& g) {
    return face ? (g.array() - g.mean()).abs().maxCoeff() : g.lpNorm<Eigen::Infinity>();
  };

  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  reduced(x, g, h);
  double gnorm = projected_norm(g);
  for (int it = 0; it < 5 && gnorm > 0.0; ++it) {
    const Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) break;
    Eigen::VectorXd step = llt.solve(g);
    if (face) {
      // Newton step of the problem restricted to sum(step) = 0.
      const Eigen::VectorXd ones_dir = llt.solve(Eigen::VectorXd::Ones(k));
      step -= (step.sum() / ones_dir.sum()) * ones_dir;
    }
    Eigen::VectorXd trial = x;
    trial(free) += step;
    if ((trial(free).array() <= 0.0).any()) break;
    if (face) {
      trial(free) /= trial.sum();
      while (trial.sum() > 1.0) {
        Eigen::Index top = 0;
        trial.maxCoeff(&top);
        trial[top] = std::nextafter(trial[top], 0.0);
      }
    } else if (trial.sum() >= 1.0) {
      break;
    }
    const double v = f.value(trial);
    if (!(v >= value - 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(value)))) break;
    Eigen::VectorXd g2;
    Eigen::MatrixXd h2;
    reduced(trial, g2, h2);
    const double g2norm = projected_norm(g2);
    if (!(g2norm < gnorm)) break;
    x = trial;
    value = v;
    gnorm = g2norm;
    g = g2;
    h = h2;
  }
  return x;
}

Eigen::VectorXd polish_epigraph(const Eigen::VectorXd& x, const Eigen::MatrixXd& rows, const Eigen::VectorXd& odds) {
  Eigen::VectorXd best = x;
  double best_t = constraint_values(rows, odds, 1.0, x).minCoeff();
  std::vector<Eigen::VectorXd> trial = candidates(x);
  // On an arbitrage book the full hedge x ~ 1/O pays the same on every
  // outcome, so every row ties there; the barrier only gets near it.
  const Eigen::VectorXd inv = odds.cwiseInverse();
  if (inv.sum() < 1.0) {
    if (auto hedge = on_budget(inv / inv.sum())) trial.push_back(std::move(*hedge));
  }
  for (const Eigen::VectorXd& c : trial) {
    if (c == best) continue;
    const double t = constraint_values(rows, odds, 1.0, c).minCoeff();
    if (t >= best_t) {
      best = c;
      best_t = t;
    }
  }
  return best;
}

// A row whose gradient at x = 0 has no positive entry: by concavity
// g_s(x) <= grad g_s(0)' x <= 0 for every feasible x, so the zero wager is
// the best any program containing this row can do.
std::optional<Eigen::Index> edgeless_row(const Eigen::MatrixXd& rows, const Eigen::VectorXd& odds) {
  for (Eigen::Index s = 0; s < rows.rows(); ++s) {
    const Eigen::ArrayXd slope = rows.row(s).transpose().array() * odds.array() - rows.row(s).sum();
    if ((slope <= 0.0).all()) return s;
  }
  return std::nullopt;
}

WagerAllocation maximize_log_wealth(const Eigen::VectorXd& probs, double residual, const RaceInstance& race,
                                    const std::string& stage) {
  ConcaveProgram program;
  program.odds = race.odds;
  program.objective = log_wealth_objective(probs, residual, race.odds, 1.0);
  const ConcaveSolution sol = run(program, race.wealth, stage);
  const Eigen::VectorXd x =
      newton_on_support(polish_objective(sol.x, *program.objective, {}, race.odds), *program.objective);

  WagerAllocation out;
  out.stakes = x * race.wealth;
  out.objective = program.objective->value(x) + std::log(race.wealth);
  out.report.iterations = sol.iterations;
  out.report.kkt_residual = kkt_residual(program, x, sol.multipliers);
  return out;
}

Eigen::MatrixXd drop_rows(const Eigen::MatrixXd& rows, const std::vector<Eigen::Index>& relaxed) {
  std::vector<bool> drop(static_cast<std::size_t>(rows.rows()), false);
  for (Eigen::Index s : relaxed) drop[static_cast<std::size_t>(s)] = true;
  Eigen::MatrixXd kept(rows.rows() - static_cast<Eigen::Index>(relaxed.size()), rows.cols());
  Eigen::Index k = 0;
  for (Eigen::Index s = 0; s < rows.rows(); ++s)
    if (!drop[static_cast<std::size_t>(s)]) kept.row(k++) = rows.row(s);
  return kept;
}

// Indices of the `count` rows with the smallest value, ties by index.
std::vector<Eigen::Index> worst_rows(const Eigen::VectorXd& values, Eigen::Index count) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

// A point with g_s(x) > 0 for every row, or nothing when the feasible set
// has no interior (then only stakes with g_s = 0 throughout, such as the
// zero wager, are feasible).  Tries shrinking the Emc stakes first, then a
// phase-1 epigraph solve that stops at the first iterate with t > 0.
std::optional<Eigen::VectorXd> interior_point(const Eigen::MatrixXd& rows, const Eigen::VectorXd& x_emc,
                                              const RaceInstance& race, const std::string& name,
                                              int& iterations) {
  if (edgeless_row(rows, race.odds)) return std::nullopt;
  if (x_emc.sum() > 0.0) {
    for (double scale = 0.5; scale > 1e-9; scale *= 0.5) {
      const Eigen::VectorXd c = scale * x_emc;
      if (constraint_values(rows, race.odds, 1.0, c).minCoeff() > 0.0 && (c.array() > 0.0).all()) return c;
    }
  }
  ConcaveProgram phase1;
  phase1.odds = race.odds;
  phase1.constraints = rows;
  BarrierOptions early;
  early.stop_when_t_above = 0.0;
  try {
    const ConcaveSolution sol = run(phase1, race.wealth, name + " feasibility stage", early);
    iterations += sol.iterations;
    if (sol.stopped_early) return sol.x;
  } catch (const IterateError&) {
    // Near-degenerate case: phase 1 creeps toward t = 0 at the zero wager.
    iterations += early.max_iterations;
  }
  return std::nullopt;
}

// Shared body of ECC2 / ECCN: maximize the mc objective subject to
// g_s(x) >= log w for the constraint rows that survive relaxation.
WagerAllocation solve_expected_chance(const ProbVector& mc, const Eigen::MatrixXd& rows, Eigen::Index relax,
                                      const RaceInstance& race, const std::string& name) {
  const ConcaveObjective objective = log_wealth_objective(mc.probs, 0.0, race.odds, 1.0);
  WagerAllocation emc = maximize_log_wealth(mc.probs, 0.0, race, name + " unconstrained stage");
  const Eigen::VectorXd x_emc = emc.stakes / race.wealth;

  std::vector<Eigen::Index> relaxed;
  if (relax > 0) relaxed = worst_rows(constraint_values(rows, race.odds, 1.0, x_emc), relax);
  const Eigen::MatrixXd kept = drop_rows(rows, relaxed);

  WagerAllocation out;
  out.report.active_scenarios = relaxed;
  int iterations = emc.report.iterations;

  if (kept.rows() == 0 || constraint_values(kept, race.odds, 1.0, x_emc).minCoeff() >= 0.0) {
    emc.report.active_scenarios = relaxed;
    return emc;
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(race.odds.size());
  double kkt = 0.0;
  const std::optional<Eigen::VectorXd> start = interior_point(kept, x_emc, race, name, iterations);
  if (!start) {
    out.report.zero_fallback = true;
  } else {
    ConcaveProgram program;
    program.odds = race.odds;
    program.objective = objective;
    program.constraints = kept;
    program.rhs = 0.0;
    program.start = *start;
    const ConcaveSolution sol = run(program, race.wealth, name + " constrained stage");
    iterations += sol.iterations;
    x = polish_objective(sol.x, objective, kept, race.odds);
    kkt = kkt_residual(program, x, sol.multipliers);
  }

  out.stakes = x * race.wealth;
  out.objective = objective.value(x) + std::log(race.wealth);
  out.report.iterations = iterations;
  out.report.kkt_residual = kkt;
  return out;
}

}  // namespace

WagerAllocation solve_standard(const ProbVector& probs, const RaceInstance& race) {
  check_probs(probs, race);
  return maximize_log_wealth(probs.probs, 0.0, race, "solve_standard");
}

WagerAllocation solve_fractional(const ProbVector& probs, const RaceInstance& race, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::Domain, "fraction must lie in (0, 1]");
  WagerAllocation full = solve_standard(probs, race);
  if (fraction == 1.0) return full;
  full.stakes *= fraction;
  full.objective = expected_log_wealth(full.stakes, probs, race);
  return full;
}

WagerAllocation solve_elb(const ProbVector& lower_bounds, const RaceInstance& race) {
  check_probs(lower_bounds, race);
  const double total = lower_bounds.total();
  if (total > 1.0 + 1e-12) throw Error(ErrorKind::Domain, "lower bounds sum to more than one");
  // Below rounding level the extra all-lose outcome is dropped so Sigma = 0
  // reproduces the standard program exactly.
  const double residual = 1.0 - total > 1e-12 ? 1.0 - total : 0.0;
  return maximize_log_wealth(lower_bounds.probs, residual, race, "solve_elb");
}

WagerAllocation solve_scenario_epigraph(const Eigen::MatrixXd& scenario_probs, const RaceInstance& race,
                                        const std::vector<Eigen::Index>& relaxed) {
  race.validate();
  if (scenario_probs.cols() != race.odds.size())
    throw Error(ErrorKind::Shape, "scenario rows must have one probability per outcome");
  for (Eigen::Index s : relaxed)
    if (s < 0 || s >= scenario_probs.rows()) throw Error(ErrorKind::Shape, "relaxed scenario index out of range");
  ConcaveProgram program;
  program.odds = race.odds;
  program.constraints = drop_rows(scenario_probs, relaxed);
  if (program.constraints.rows() == 0) throw Error(ErrorKind::Domain, "every scenario constraint was relaxed");

  WagerAllocation out;
  Eigen::VectorXd x;
  if (const auto s = edgeless_row(program.constraints, race.odds)) {
    x = Eigen::VectorXd::Zero(race.odds.size());
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(program.constraints.rows());
    lambda[*s] = 1.0;
    out.report.kkt_residual = kkt_residual(program, x, lambda);
  } else {
    const ConcaveSolution sol = run(program, race.wealth, "epigraph");
    x = polish_epigraph(sol.x, program.constraints, race.odds);
    out.report.iterations = sol.iterations;
    out.report.kkt_residual = kkt_residual(program, x, sol.multipliers);
  }
  out.stakes = x * race.wealth;
  const double t = constraint_values(program.constraints, race.odds, 1.0, x).minCoeff() + std::log(race.wealth);
  out.objective = t;
  out.report.t_value = t;
  out.report.active_scenarios = relaxed;
  return out;
}

WagerAllocation solve_cc2(const TiltedProbs& tilt, const RaceInstance& race) {
  require_two(race, "solve_cc2");
  Eigen::MatrixXd rows(2, 2);
  rows << tilt.pi_h1, tilt.pi_l2, tilt.pi_l1, tilt.pi_h2;
  WagerAllocation out = solve_scenario_epigraph(rows, race);
  out.report.active_scenarios.reset();
  return out;
}

WagerAllocation solve_ccn(const ScenarioSet& scenarios, const RaceInstance& race, double alpha) {
  check_alpha(alpha);
  if (scenarios.count() < 1) throw Error(ErrorKind::Domain, "solve_ccn needs at least one scenario");
  WagerAllocation stage1;
  try {
    stage1 = solve_scenario_epigraph(scenarios.scenarios, race);
  } catch (const IterateError& e) {
    throw IterateError(ErrorKind::Solver, std::string("solve_ccn stage (i): ") + e.what(), e.best_iterate());
  }
  const Eigen::Index relax = relaxation_budget(scenarios.count(), alpha);
  if (relax == 0) return stage1;

  // Largest t - g_s first == smallest g_s first.
  const Eigen::VectorXd x1 = stage1.stakes / race.wealth;
  Eigen::VectorXd g = constraint_values(scenarios.scenarios, race.odds, 1.0, x1);
  const Eigen::ArrayXd lw = (race.odds.array() * x1.array() + (1.0 - x1.sum())).log();
  if (lw.maxCoeff() - lw.minCoeff() <= 1e-12) {
    // Flat wealth (the zero wager, or a full hedge of an arbitrage book):
    // every row ties and the order is rounding noise.  Rank at the Kelly
    // stake of the scenario mean instead, or by best edge if that is zero.
    const Eigen::VectorXd mean = scenarios.scenarios.colwise().mean().transpose();
    const Eigen::VectorXd ref = maximize_log_wealth(mean, 0.0, {race.odds, 1.0}, "solve_ccn ranking stage").stakes;
    if (ref.sum() > 0.0) g = constraint_values(scenarios.scenarios, race.odds, 1.0, ref);
    else g = (scenarios.scenarios * race.odds.asDiagonal()).rowwise().maxCoeff();
  }
  const std::vector<Eigen::Index> relaxed = worst_rows(g, relax);
  try {
    WagerAllocation stage2 = solve_scenario_epigraph(scenarios.scenarios, race, relaxed);
    stage2.report.iterations += stage1.report.iterations;
    return stage2;
  } catch (const IterateError& e) {
    throw IterateError(ErrorKind::Solver, std::string("solve_ccn stage (iv): ") + e.what(), e.best_iterate());
  }
}

WagerAllocation solve_ecc2(const ProbVector& mc, const TiltedProbs& tilt, const RaceInstance& race) {
  require_two(race, "solve_ecc2");
  check_probs(mc, race);
  Eigen::MatrixXd rows(2, 2);
  rows << tilt.pi_h1, tilt.pi_l2, tilt.pi_l1, tilt.pi_h2;
  WagerAllocation out = solve_expected_chance(mc, rows, 0, race, "solve_ecc2");
  out.report.active_scenarios.reset();
  return out;
}

WagerAllocation solve_eccn(const ProbVector& mc, const ScenarioSet& scenarios, const RaceInstance& race,
                           double alpha) {
  check_alpha(alpha);
  check_probs(mc, race);
  if (scenarios.count() < 1) throw Error(ErrorKind::Domain, "solve_eccn needs at least one scenario");
  if (scenarios.scenarios.cols() != race.odds.size())
    throw Error(ErrorKind::Shape, "scenario rows must have one probability per outcome");
  return solve_expected_chance(mc, scenarios.scenarios, relaxation_budget(scenarios.count(), alpha), race,
                               "solve_eccn");
}

WagerAllocation allocate(const ModelSpec& spec, const BeliefState& belief, const RaceInstance& race,
                         const StreamPlan& streams) {
  race.validate();
  if (belief.outcomes() != race.odds.size())
    throw Error(ErrorKind::Shape, "belief and race disagree on the number of outcomes");
  spec.validate(race.odds.size());

  const auto mc = [&] {
    RandomStream stream = streams.monte_carlo();
    return mc_probs(belief, spec.samples, stream);
  };
  const auto scenarios = [&] {
    RandomStream stream = streams.scenarios();
    return sample_scenarios(belief, spec.scenarios, stream);
  };

  switch (spec.variant) {
    case Variant::S: return solve_standard(point_probs(belief), race);
    case Variant::F: return solve_fractional(point_probs(belief), race, spec.fraction);
    case Variant::Elb: return solve_elb(jensen_lb(belief), race);
    case Variant::Emc: return solve_standard(mc(), race);
    case Variant::CC2: return solve_cc2(cc2_tilt(belief, spec.alpha), race);
    case Variant::CCN: return solve_ccn(scenarios(), race, spec.alpha);
    case Variant::ECC2: return solve_ecc2(mc(), cc2_tilt(belief, spec.alpha), race);
    case Variant::ECCN: return solve_eccn(mc(), scenarios(), race, spec.alpha);
    case Variant::T: break;
  }
  throw Error(ErrorKind::Input, "variant T requires true probabilities and is only available in experiments");
}

}  // namespace kellyuq
