#include "kellyuq/barrier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "kellyuq/error.hpp"

namespace kellyuq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kBoundaryFraction = 0.9;
// Programs with more rows than this are solved by constraint generation.
constexpr Eigen::Index kDirectRows = 64;
// A row counts as violated when it falls this far (relative) below the
// working-set epigraph value.
constexpr double kRowTolerance = 1e-12;

Eigen::VectorXd wealth_after(const Eigen::VectorXd& odds, double wealth, const Eigen::VectorXd& x) {
  return (odds.array() * x.array() + (wealth - x.sum())).matrix();
}

// Adds -sum_h c_h a_h a_h' to hess, where a_h = O_h e_h - 1 is the gradient
// of W_h.  Costs O(n^2) regardless of how many rows contributed to c.
void subtract_log_wealth_curvature(const Eigen::VectorXd& c, const Eigen::VectorXd& odds,
                                   Eigen::Ref<Eigen::MatrixXd> hess) {
  const Eigen::VectorXd co = c.cwiseProduct(odds);
  hess.diagonal() -= co.cwiseProduct(odds);
  hess.rowwise() += co.transpose();
  hess.colwise() += co;
  hess.array() -= c.sum();
}

}  // namespace

ConcaveObjective log_wealth_objective(Eigen::VectorXd probs, double residual_mass,
                                      Eigen::VectorXd odds, double wealth) {
  ConcaveObjective f;
  f.value = [=](const Eigen::VectorXd& x) {
    const double slack = wealth - x.sum();
    const Eigen::VectorXd w = wealth_after(odds, wealth, x);
    if ((w.array() <= 0.0).any()) return kNegInf;
    double v = probs.dot(w.array().log().matrix());
    if (residual_mass != 0.0) {
      if (slack <= 0.0) return kNegInf;
      v += residual_mass * std::log(slack);
    }
    return v;
  };
  f.derivatives = [=](const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    const Eigen::VectorXd w = wealth_after(odds, wealth, x);
    const Eigen::VectorXd r = probs.cwiseQuotient(w);
    grad = r.cwiseProduct(odds).array() - r.sum();
    hess.setZero(x.size(), x.size());
    subtract_log_wealth_curvature(r.cwiseQuotient(w), odds, hess);
    if (residual_mass != 0.0) {
      const double slack = wealth - x.sum();
      grad.array() -= residual_mass / slack;
      hess.array() -= residual_mass / (slack * slack);
    }
  };
  return f;
}

ConcaveObjective linear_objective(Eigen::VectorXd coeffs) {
  ConcaveObjective f;
  f.value = [=](const Eigen::VectorXd& x) { return coeffs.dot(x); };
  f.derivatives = [=](const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    grad = coeffs;
    hess.setZero(x.size(), x.size());
  };
  return f;
}

Eigen::VectorXd constraint_values(const Eigen::MatrixXd& constraints, const Eigen::VectorXd& odds,
                                  double wealth, const Eigen::VectorXd& x) {
  const Eigen::VectorXd w = wealth_after(odds, wealth, x);
  return constraints * w.array().log().matrix();
}

namespace {

struct KktParts {
  double stationarity;
  double complementarity;
};

// Bound multipliers are implicit: min(x_h, -dL/dx_h) vanishes exactly when
// x_h >= 0, dL/dx_h <= 0 and one of them is zero.  nu prices the budget
// sum x <= w.
KktParts kkt_parts(const Eigen::VectorXd& x, const Eigen::VectorXd& objective_grad, const Eigen::MatrixXd& jac,
                   const Eigen::ArrayXd& gap, const Eigen::VectorXd& lambda, double nu, double budget_slack) {
  Eigen::VectorXd lag = objective_grad;
  if (jac.rows() > 0) lag += jac.transpose() * lambda;
  lag.array() -= nu;
  KktParts k;
  k.stationarity = x.array().min(-lag.array()).abs().maxCoeff();
  k.complementarity = std::abs(nu * budget_slack);
  if (jac.rows() > 0) k.complementarity = std::max(k.complementarity, (lambda.array() * gap).abs().maxCoeff());
  return k;
}

double worst(const KktParts& k) { return std::max(k.stationarity, k.complementarity); }

// Lawson-Hanson: argmin |A z - b| over z >= 0.
Eigen::VectorXd nonnegative_least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const Eigen::Index cols = a.cols();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(cols);
  std::vector<char> passive(static_cast<std::size_t>(cols), 0);
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() * std::max<double>(1.0, a.cwiseAbs().maxCoeff()) *
                     static_cast<double>(std::max(a.rows(), cols));
  auto solve_passive = [&](std::vector<Eigen::Index>& idx) {
    idx.clear();
    for (Eigen::Index j = 0; j < cols; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) ap.col(static_cast<Eigen::Index>(i)) = a.col(idx[i]);
    return Eigen::VectorXd(ap.completeOrthogonalDecomposition().solve(b));
  };
  std::vector<Eigen::Index> idx;
  for (Eigen::Index outer = 0; outer < 3 * cols + 10; ++outer) {
    const Eigen::VectorXd w = a.transpose() * (b - a * z);
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!passive[static_cast<std::size_t>(j)] && w[j] > tol && (best < 0 || w[j] > w[best])) best = j;
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = 1;
    for (Eigen::Index inner = 0; inner < cols + 1; ++inner) {
      const Eigen::VectorXd zp = solve_passive(idx);
      if ((zp.array() > 0.0).all()) {
        for (std::size_t i = 0; i < idx.size(); ++i) z[idx[i]] = zp[static_cast<Eigen::Index>(i)];
        break;
      }
      double step = 1.0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double cur = z[idx[i]], next = zp[static_cast<Eigen::Index>(i)];
        if (next <= 0.0) step = std::min(step, cur / (cur - next));
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const Eigen::Index j = idx[i];
        z[j] += step * (zp[static_cast<Eigen::Index>(i)] - z[j]);
        if (z[j] <= tol) {
          z[j] = 0.0;
          passive[static_cast<std::size_t>(j)] = 0;
        }
      }
    }
  }
  return z;
}

}  // namespace

double kkt_residual(const ConcaveProgram& program, const Eigen::VectorXd& x, const Eigen::VectorXd& multipliers) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
  if (program.objective) {
    Eigen::MatrixXd hess;
    program.objective->derivatives(x, grad, hess);
  }
  const Eigen::Index rows = program.constraints.rows();
  const double budget_slack = program.wealth - x.sum();
  double infeasibility = std::max({0.0, -budget_slack, -x.minCoeff()});

  Eigen::ArrayXd gap;
  Eigen::MatrixXd jac(0, n);
  if (rows > 0) {
    const Eigen::VectorXd w = wealth_after(program.odds, program.wealth, x);
    const Eigen::ArrayXd g = (program.constraints * w.array().log().matrix()).array();
    const double level = program.objective ? program.rhs : g.minCoeff();
    gap = g - level;
    infeasibility = std::max(infeasibility, (-gap).max(0.0).maxCoeff());
    // Row s of jac is the gradient of g_s.
    const Eigen::MatrixXd r = program.constraints * w.cwiseInverse().asDiagonal();
    jac = r * program.odds.asDiagonal();
    jac.colwise() -= r.rowwise().sum();
  }

  KktParts best = kkt_parts(x, grad, jac, gap, multipliers, 0.0, budget_slack);

  // Barrier estimates mu / slack are poor along the normals of tight rows,
  // and no estimate is kept for the budget.  Fit the multipliers of the tight
  // rows and of a tight budget by least squares on the stakes clear of zero.
  std::vector<Eigen::Index> tight, free;
  for (Eigen::Index s = 0; s < rows; ++s)
    if (gap[s] <= 1e-9) tight.push_back(s);
  for (Eigen::Index h = 0; h < n; ++h)
    if (x[h] > 1e-9 * program.wealth) free.push_back(h);
  const bool budget_tight = budget_slack <= 1e-7 * program.wealth;
  if (!tight.empty() || budget_tight) {
    const auto a = static_cast<Eigen::Index>(tight.size());
    const Eigen::Index cols = a + (budget_tight ? 1 : 0);
    const auto f = static_cast<Eigen::Index>(free.size());
    const Eigen::Index extra = !program.objective && rows > 0 ? 1 : 0;
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(f + extra, cols);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(f + extra);
    Eigen::VectorXd others = multipliers;
    for (Eigen::Index s : tight) others[s] = 0.0;
    Eigen::VectorXd base = grad;
    if (rows > 0) base += jac.transpose() * others;
    for (Eigen::Index i = 0; i < f; ++i) {
      const Eigen::Index h = free[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < a; ++j) lhs(i, j) = jac(tight[static_cast<std::size_t>(j)], h);
      if (budget_tight) lhs(i, a) = -1.0;
      rhs[i] = -base[h];
    }
    if (extra) {
      // Epigraph form: dL/dt = 1 - sum(lambda) = 0.
      lhs.row(f).head(a).setOnes();
      rhs[f] = 1.0 - others.sum();
    }
    const Eigen::VectorXd fit = nonnegative_least_squares(lhs, rhs);
    Eigen::VectorXd refined = others;
    for (Eigen::Index j = 0; j < a; ++j) refined[tight[static_cast<std::size_t>(j)]] = fit[j];
    const double nu = budget_tight ? fit[a] : 0.0;
    const KktParts k = kkt_parts(x, grad, jac, gap, refined, nu, budget_slack);
    if (worst(k) < worst(best)) best = k;
  }
  return std::max({best.stationarity, best.complementarity, infeasibility});
}

namespace {

class BarrierProblem {
 public:
  BarrierProblem(const ConcaveProgram& program, const BarrierOptions& options)
      : p_(program), opt_(options), n_(program.odds.size()),
        epigraph_(!program.objective.has_value()), dim_(n_ + (epigraph_ ? 1 : 0)) {}

  Eigen::Index dim() const { return dim_; }
  bool epigraph() const { return epigraph_; }
  void set_mu(double mu) { mu_ = mu; }

  // Barrier function; -inf outside the open domain.
  double value(const Eigen::VectorXd& y) const {
    const auto x = y.head(n_);
    if ((x.array() <= 0.0).any()) return kNegInf;
    const double slack = p_.wealth - x.sum();
    if (!(slack > 0.0)) return kNegInf;
    const Eigen::VectorXd w = wealth_after(p_.odds, p_.wealth, x);
    if ((w.array() < opt_.wealth_margin * p_.wealth).any()) return kNegInf;

    const double f = epigraph_ ? y[n_] : p_.objective->value(x);
    if (!std::isfinite(f)) return kNegInf;
    double barrier = x.array().log().sum() + std::log(slack);
    if (p_.constraints.rows() > 0) {
      const Eigen::ArrayXd sl = (p_.constraints * w.array().log().matrix()).array() - level(y);
      if ((sl <= 0.0).any()) return kNegInf;
      barrier += sl.log().sum();
    }
    return f + mu_ * barrier;
  }

  void derivatives(const Eigen::VectorXd& y, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const Eigen::VectorXd x = y.head(n_);
    const double slack = p_.wealth - x.sum();
    grad.setZero(dim_);
    hess.setZero(dim_, dim_);

    if (epigraph_) {
      grad[n_] = 1.0;
    } else {
      Eigen::VectorXd gx;
      Eigen::MatrixXd hx;
      p_.objective->derivatives(x, gx, hx);
      grad.head(n_) = gx;
      hess.topLeftCorner(n_, n_) = hx;
    }

    auto hxx = hess.topLeftCorner(n_, n_);
    grad.head(n_).array() += mu_ / x.array() - mu_ / slack;
    hxx.diagonal().array() -= mu_ / x.array().square();
    hxx.array() -= mu_ / (slack * slack);

    const Eigen::Index s_count = p_.constraints.rows();
    if (s_count == 0) return;
    const Eigen::VectorXd w = wealth_after(p_.odds, p_.wealth, x);
    const Eigen::ArrayXd sl = (p_.constraints * w.array().log().matrix()).array() - level(y);
    const Eigen::VectorXd weight = (mu_ / sl).matrix();

    // Gradient of each constraint row: r_s o O - sum(r_s), with r_sh = P_sh / W_h.
    const Eigen::MatrixXd r = p_.constraints * w.cwiseInverse().asDiagonal();
    Eigen::MatrixXd u(s_count, dim_);
    u.leftCols(n_) = r * p_.odds.asDiagonal();
    u.leftCols(n_).colwise() -= r.rowwise().sum();
    if (epigraph_) u.col(n_).setConstant(-1.0);

    grad += u.transpose() * weight;
    // sum_s weight_s * Hess g_s, folded through the shared W.
    const Eigen::VectorXd c = (p_.constraints.transpose() * weight).cwiseQuotient(w.cwiseAbs2());
    subtract_log_wealth_curvature(c, p_.odds, hxx);
    // -sum_s mu / sl_s^2 u_s u_s'
    const Eigen::MatrixXd scaled = (std::sqrt(mu_) / sl).matrix().asDiagonal() * u;
    hess.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), -1.0);
    hess.triangularView<Eigen::StrictlyUpper>() = hess.transpose();
  }

  // Constraint multiplier estimates mu / slack_s; in epigraph form they are
  // rescaled to sum to one, which is what dL/dt = 0 asks for.
  Eigen::VectorXd multipliers(const Eigen::VectorXd& y) const {
    if (p_.constraints.rows() == 0) return {};
    const Eigen::VectorXd w = wealth_after(p_.odds, p_.wealth, y.head(n_));
    const Eigen::ArrayXd sl = (p_.constraints * w.array().log().matrix()).array() - level(y);
    Eigen::VectorXd lambda = (mu_ / sl).matrix();
    if (epigraph_) lambda /= lambda.sum();
    return lambda;
  }

  // Largest step in (0, 1] keeping the linear constraints strictly satisfied.
  double max_step(const Eigen::VectorXd& y, const Eigen::VectorXd& dir) const {
    double s = 1.0;
    for (Eigen::Index h = 0; h < n_; ++h)
      if (dir[h] < 0.0) s = std::min(s, -kBoundaryFraction * y[h] / dir[h]);
    const double ds = dir.head(n_).sum();
    if (ds > 0.0) s = std::min(s, kBoundaryFraction * (p_.wealth - y.head(n_).sum()) / ds);
    return s;
  }

 private:
  double level(const Eigen::VectorXd& y) const { return epigraph_ ? y[n_] : p_.rhs; }

  const ConcaveProgram& p_;
  const BarrierOptions& opt_;
  Eigen::Index n_;
  bool epigraph_;
  Eigen::Index dim_;
  double mu_ = 1.0;
};

// The barrier iteration on every row of the program.
ConcaveSolution solve_all_rows(const ConcaveProgram& program, const BarrierOptions& options) {
  const Eigen::Index n = program.odds.size();
  BarrierProblem problem(program, options);
  Eigen::VectorXd y(problem.dim());
  if (program.start) {
    if (program.start->size() != n) throw Error(ErrorKind::Shape, "maximize_concave: start has wrong size");
    y.head(n) = *program.start;
  } else {
    y.head(n).setConstant(program.wealth / (2.0 * static_cast<double>(n + 1)));
  }
  if (problem.epigraph()) {
    y[n] = constraint_values(program.constraints, program.odds, program.wealth, y.head(n)).minCoeff() - 1.0;
  }

  ConcaveSolution sol;
  double mu = options.mu_start;
  problem.set_mu(mu);
  if (!std::isfinite(problem.value(y)))
    throw Error(ErrorKind::Solver, "maximize_concave: starting point is not strictly feasible");

  Eigen::VectorXd grad, dir;
  Eigen::MatrixXd hess;
  int iterations = 0;
  for (;;) {
    const bool final_stage = mu <= options.mu_end;
    for (;;) {
      problem.derivatives(y, grad, hess);
      Eigen::LLT<Eigen::MatrixXd> llt(-hess);
      if (llt.info() == Eigen::Success) {
        dir = llt.solve(grad);
      } else {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
        if (ldlt.info() != Eigen::Success)
          throw Error(ErrorKind::Solver, "maximize_concave: Newton system is singular");
        dir = ldlt.solve(grad);
      }
      const double decrement = grad.dot(dir);
      if (!std::isfinite(decrement))
        throw IterateError(ErrorKind::Solver, "maximize_concave: non-finite Newton step", y.head(n));
      const double gnorm = grad.lpNorm<Eigen::Infinity>();
      if (final_stage ? (gnorm <= 1e-11 || decrement <= 1e-20) : decrement <= 1e-12) break;

      if (++iterations > options.max_iterations) {
        throw IterateError(ErrorKind::NonConvergence,
                           "maximize_concave: iteration cap of " + std::to_string(options.max_iterations) +
                               " reached",
                           y.head(n));
      }
      const double phi = problem.value(y);
      double s = problem.max_step(y, dir);
      bool accepted = false;
      bool progressed = false;
      for (int k = 0; k < 80; ++k, s *= 0.5) {
        const Eigen::VectorXd trial = y + s * dir;
        const double phi_trial = problem.value(trial);
        if (std::isfinite(phi_trial) && phi_trial >= phi + 1e-4 * s * decrement) {
          progressed = phi_trial > phi;
          y = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted || !progressed) {
        // Rounding floor: the model predicts less progress than phi can resolve.
        if (decrement <= 1e-9 * std::max(1.0, std::abs(phi))) break;
        throw IterateError(ErrorKind::Solver, "maximize_concave: line search failed", y.head(n));
      }
      if (options.stop_when_t_above && problem.epigraph() && y[n] > *options.stop_when_t_above) {
        sol.stopped_early = true;
        break;
      }
    }
    if (sol.stopped_early || final_stage) break;
    mu *= options.mu_factor;
    problem.set_mu(mu);
  }

  sol.x = y.head(n);
  sol.iterations = iterations;
  sol.multipliers = problem.multipliers(y);
  sol.kkt_residual = kkt_residual(program, sol.x, sol.multipliers);
  if (problem.epigraph()) {
    sol.t = constraint_values(program.constraints, program.odds, program.wealth, sol.x).minCoeff();
    sol.value = sol.t;
  } else {
    sol.value = program.objective->value(sol.x);
    sol.t = sol.value;
  }
  return sol;
}

std::vector<Eigen::Index> lowest(const Eigen::VectorXd& v, const std::vector<char>& skip, double below,
                                 std::size_t count) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index s = 0; s < v.size(); ++s)
    if (!skip[static_cast<std::size_t>(s)] && v[s] < below) idx.push_back(s);
  const std::size_t k = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b] || (v[a] == v[b] && a < b); });
  idx.resize(k);
  return idx;
}

}  // namespace

ConcaveSolution maximize_concave(const ConcaveProgram& program, const BarrierOptions& options) {
  const Eigen::Index n = program.odds.size();
  if (n < 1) throw Error(ErrorKind::Shape, "maximize_concave: empty stake vector");
  const Eigen::Index rows = program.constraints.rows();
  if (rows > 0 && program.constraints.cols() != n)
    throw Error(ErrorKind::Shape, "maximize_concave: constraint rows must have one entry per outcome");
  if (!program.objective && rows == 0)
    throw Error(ErrorKind::Shape, "maximize_concave: epigraph form needs at least one constraint");
  if (!(program.wealth > 0.0)) throw Error(ErrorKind::Domain, "maximize_concave: wealth must be positive");
  if (program.start && program.start->size() != n)
    throw Error(ErrorKind::Shape, "maximize_concave: start has wrong size");
  if (rows <= kDirectRows) return solve_all_rows(program, options);

  // Constraint generation.  g_s is linear in the row P_s, so most rows of a
  // large scenario set never bind; solve on a working set and add the rows
  // the working solution violates.  Thousands of nearly tight rows otherwise
  // bend the central path so far that centering needs O(rows) Newton steps.
  const auto per_round = static_cast<std::size_t>(std::max<Eigen::Index>(16, 2 * n));
  std::vector<char> in(static_cast<std::size_t>(rows), 0);
  std::vector<Eigen::Index> work;
  auto add = [&](Eigen::Index s) {
    if (!in[static_cast<std::size_t>(s)]) {
      in[static_cast<std::size_t>(s)] = 1;
      work.push_back(s);
    }
  };
  for (Eigen::Index h = 0; h < n; ++h) {
    Eigen::Index lo = 0, hi = 0;
    program.constraints.col(h).minCoeff(&lo);
    program.constraints.col(h).maxCoeff(&hi);
    add(lo);
    add(hi);
  }
  const Eigen::VectorXd x0 =
      program.start ? *program.start
                    : Eigen::VectorXd::Constant(n, program.wealth / (2.0 * static_cast<double>(n + 1)));
  const Eigen::VectorXd v0 = constraint_values(program.constraints, program.odds, program.wealth, x0);
  for (Eigen::Index s : lowest(v0, in, std::numeric_limits<double>::infinity(), per_round)) add(s);

  ConcaveProgram sub = program;
  int iterations = 0;
  for (;;) {
    std::sort(work.begin(), work.end());
    sub.constraints.resize(static_cast<Eigen::Index>(work.size()), n);
    for (std::size_t i = 0; i < work.size(); ++i)
      sub.constraints.row(static_cast<Eigen::Index>(i)) = program.constraints.row(work[i]);
    ConcaveSolution sol = solve_all_rows(sub, options);
    iterations += sol.iterations;

    const Eigen::VectorXd v = constraint_values(program.constraints, program.odds, program.wealth, sol.x);
    double below = program.rhs;
    if (!program.objective)
      below = sol.stopped_early ? *options.stop_when_t_above
                                : sol.t - kRowTolerance * std::max(1.0, std::abs(sol.t));
    const std::vector<Eigen::Index> violated = lowest(v, in, below, per_round);
    if (violated.empty()) {
      Eigen::VectorXd lambda = Eigen::VectorXd::Zero(rows);
      for (std::size_t i = 0; i < work.size(); ++i) lambda[work[i]] = sol.multipliers[static_cast<Eigen::Index>(i)];
      sol.multipliers = std::move(lambda);
      sol.iterations = iterations;
      if (!program.objective) {
        sol.t = v.minCoeff();
        sol.value = sol.t;
        sol.stopped_early = sol.stopped_early && sol.t > *options.stop_when_t_above;
      }
      sol.kkt_residual = kkt_residual(program, sol.x, sol.multipliers);
      return sol;
    }
    for (Eigen::Index s : violated) add(s);
    if (!program.objective && !sol.stopped_early) sub.start = sol.x;
  }
}

}  // namespace kellyuq