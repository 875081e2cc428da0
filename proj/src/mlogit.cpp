#include "kellyuq/mlogit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kellyuq/error.hpp"
#include "linalg.hpp"

namespace kellyuq {

RaceHistory::RaceHistory(std::vector<RaceRecord> races) : races_(std::move(races)) {
  if (races_.empty()) throw Error(ErrorKind::Input, "race history is empty");
  dim_ = races_.front().factors.cols();
  for (std::size_t r = 0; r < races_.size(); ++r) {
    const auto& race = races_[r];
    const std::string where = "race " + std::to_string(r) + ": ";
    if (race.factors.rows() < 2) throw Error(ErrorKind::Input, where + "needs at least two runners");
    if (race.factors.cols() != dim_) throw Error(ErrorKind::Shape, where + "factor dimension differs");
    if (!race.factors.allFinite()) throw Error(ErrorKind::Input, where + "non-finite factor value");
    if (race.winner < 0 || race.winner >= race.factors.rows())
      throw Error(ErrorKind::Input, where + "winner index out of range");
  }
}

namespace {

void check_dim(const Eigen::VectorXd& beta, const RaceHistory& history) {
  if (beta.size() != history.dim()) {
    throw Error(ErrorKind::Shape, "coefficient vector has dimension " + std::to_string(beta.size()) +
                                      ", history has " + std::to_string(history.dim()));
  }
}

// Winning probabilities of one race, max-shifted.
Eigen::VectorXd race_probs(const Eigen::VectorXd& beta, const RaceRecord& race) {
  const Eigen::VectorXd u = race.factors * beta;
  Eigen::VectorXd e = (u.array() - u.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

double log_likelihood(const Eigen::VectorXd& beta, const RaceHistory& history) {
  check_dim(beta, history);
  double total = 0.0;
  for (const auto& race : history.races()) {
    const Eigen::VectorXd u = race.factors * beta;
    Eigen::Index top = 0;
    const double mx = u.maxCoeff(&top);
    // log sum exp(u) = mx + log1p(sum over non-max terms), exact for tiny tails.
    double rest = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i)
      if (i != top) rest += std::exp(u[i] - mx);
    total += (u[race.winner] - mx) - std::log1p(rest);
  }
  return total;
}

Eigen::VectorXd race_score(const Eigen::VectorXd& beta, const RaceRecord& race) {
  const Eigen::VectorXd p = race_probs(beta, race);
  // sum_i (v_w - v_i) p_i keeps the tail mass that v_w - sum_i v_i p_i rounds away.
  const Eigen::MatrixXd diff = (-race.factors).rowwise() + race.factors.row(race.winner);
  return diff.transpose() * p;
}

Eigen::VectorXd score(const Eigen::VectorXd& beta, const RaceHistory& history) {
  check_dim(beta, history);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(history.dim());
  for (const auto& race : history.races()) g += race_score(beta, race);
  return g;
}

Eigen::MatrixXd neg_hessian(const Eigen::VectorXd& beta, const RaceHistory& history) {
  check_dim(beta, history);
  const Eigen::Index m = history.dim();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, m);
  for (const auto& race : history.races()) {
    const Eigen::VectorXd p = race_probs(beta, race);
    const Eigen::RowVectorXd mean = p.transpose() * race.factors;
    // Probability-weighted covariance of the factor rows; PSD by construction.
    const Eigen::MatrixXd centered = race.factors.rowwise() - mean;
    h.noalias() += centered.transpose() * p.asDiagonal() * centered;
  }
  return 0.5 * (h + h.transpose());
}

SandwichParts sandwich_covariance(const Eigen::VectorXd& beta_hat, const RaceHistory& history) {
  check_dim(beta_hat, history);
  const Eigen::Index m = history.dim();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(m, m);
  for (const auto& race : history.races()) {
    const Eigen::VectorXd g = race_score(beta_hat, race);
    v.noalias() += g * g.transpose();
  }
  const auto info = detail::factor_spd(neg_hessian(beta_hat, history));
  if (!info) throw Error(ErrorKind::SingularInformation, "observed information is singular");
  const Eigen::MatrixXd info_inv = info->solve(Eigen::MatrixXd::Identity(m, m));
  Eigen::MatrixXd s = info_inv * v * info_inv;
  return {v, 0.5 * (s + s.transpose())};
}

FittedModel fit_mle(const RaceHistory& history, const FitOptions& options) {
  const Eigen::Index m = history.dim();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(m);
  double f = log_likelihood(beta, history);

  FittedModel fit;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd g = score(beta, history);
    const auto chol = detail::factor_spd(neg_hessian(beta, history));
    if (!chol) throw Error(ErrorKind::SingularInformation, "curvature is singular during Newton iteration");
    const Eigen::VectorXd step = chol->solve(g);
    const double gnorm = g.lpNorm<Eigen::Infinity>();

    // A small gradient alone is not enough: on separated data the gradient
    // decays while Newton steps stay O(1).
    if (gnorm <= options.grad_tol && step.lpNorm<Eigen::Infinity>() <= options.step_tol) {
      fit.converged = true;
      fit.iterations = it;
      break;
    }

    const double slope = g.dot(step);
    double s = 1.0;
    bool accepted = false;
    // Below the rounding level of f the Armijo test is noise; the full
    // Newton step is taken unless it is clearly worse.
    const double resolution = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
    if (slope <= resolution) {
      const Eigen::VectorXd trial = beta + step;
      const double f_trial = log_likelihood(trial, history);
      if (std::isfinite(f_trial) && f_trial >= f - resolution) {
        beta = trial;
        f = f_trial;
        accepted = true;
      }
    }
    for (int k = 0; k < 60 && !accepted; ++k, s *= 0.5) {
      const Eigen::VectorXd trial = beta + s * step;
      const double f_trial = log_likelihood(trial, history);
      if (std::isfinite(f_trial) && f_trial >= f + options.armijo * s * slope) {
        beta = trial;
        f = f_trial;
        accepted = true;
        break;
      }
    }
    if (beta.lpNorm<Eigen::Infinity>() > options.separation_bound) {
      throw Error(ErrorKind::Separation,
                  "coefficients diverge (|beta|_inf > " + std::to_string(options.separation_bound) +
                      "); the data appear separated");
    }
    if (!accepted) {
      if (gnorm <= options.grad_tol) {
        fit.converged = true;
        fit.iterations = it;
        break;
      }
      throw IterateError(ErrorKind::NonConvergence, "line search failed in fit_mle", beta);
    }
  }
  if (!fit.converged) {
    throw IterateError(ErrorKind::NonConvergence,
                       "fit_mle did not converge in " + std::to_string(options.max_iterations) + " iterations",
                       beta);
  }

  fit.beta_hat = beta;
  fit.log_likelihood = f;
  fit.grad_norm = score(beta, history).lpNorm<Eigen::Infinity>();
  fit.curvature = neg_hessian(beta, history);
  auto parts = sandwich_covariance(beta, history);
  fit.score_var = std::move(parts.score_var);
  fit.sandwich = std::move(parts.sandwich);
  return fit;
}

}  // namespace kellyuq
