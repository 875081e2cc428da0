#include "kellyuq/beliefs.hpp"

#include <cmath>

#include "kellyuq/error.hpp"

namespace kellyuq {

namespace {

constexpr double kProbFloor = 1e-300;

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Writes softmax(u) into out without allocating.
void softmax_into(const Eigen::VectorXd& u, Eigen::VectorXd& out) {
  out = (u.array() - u.maxCoeff()).exp();
  out /= out.sum();
  out = out.cwiseMax(kProbFloor);
}

}  // namespace

BeliefState::BeliefState(Eigen::VectorXd beta_hat, Eigen::MatrixXd cov, Eigen::MatrixXd factors)
    : beta_hat_(std::move(beta_hat)), cov_(std::move(cov)), factors_(std::move(factors)) {
  const Eigen::Index m = beta_hat_.size();
  if (cov_.rows() != m || cov_.cols() != m)
    throw Error(ErrorKind::Shape, "belief covariance must be m x m");
  if (factors_.cols() != m) throw Error(ErrorKind::Shape, "factor matrix must have m columns");
  if (factors_.rows() < 2) throw Error(ErrorKind::Shape, "belief needs at least two outcomes");
  if (!beta_hat_.allFinite() || !cov_.allFinite() || !factors_.allFinite())
    throw Error(ErrorKind::Domain, "belief has non-finite entries");
  const double scale = std::max(1.0, m > 0 ? cov_.cwiseAbs().maxCoeff() : 0.0);
  if (m > 0 && (cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error(ErrorKind::Matrix, "belief covariance is not symmetric");
}

ProbVector given_probs(Eigen::VectorXd probs) {
  if (probs.size() < 2) throw Error(ErrorKind::Shape, "need at least two probabilities");
  if (!probs.allFinite() || (probs.array() < 0.0).any())
    throw Error(ErrorKind::Domain, "probabilities must be finite and nonnegative");
  return {std::move(probs), ProbKind::Given, std::nullopt};
}

Eigen::VectorXd softmax(const Eigen::VectorXd& utilities) {
  Eigen::VectorXd out;
  softmax_into(utilities, out);
  return out;
}

ProbVector point_probs(const BeliefState& belief) {
  return {softmax(belief.utilities()), ProbKind::Point, std::nullopt};
}

ProbVector mc_probs(const BeliefState& belief, Eigen::Index samples, RandomStream& stream) {
  if (samples < 1) throw Error(ErrorKind::Domain, "mc_probs: sample count must be positive");
  const Eigen::Index n = belief.outcomes();
  MvnSampler sampler(belief.beta_hat(), belief.cov());

  Eigen::VectorXd beta(belief.beta_hat().size());
  Eigen::VectorXd u(n), p(n);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd delta(n);
  for (Eigen::Index k = 1; k <= samples; ++k) {
    sampler.draw(stream, beta);
    u.noalias() = belief.factors() * beta;
    softmax_into(u, p);
    delta = p - mean;
    mean += delta / static_cast<double>(k);
    m2.array() += delta.array() * (p - mean).array();
  }
  Eigen::VectorXd se = Eigen::VectorXd::Zero(n);
  if (samples > 1) {
    const auto nn = static_cast<double>(samples);
    se = (m2.array() / ((nn - 1.0) * nn)).sqrt().matrix();
  }
  return {mean, ProbKind::MonteCarlo, se};
}

ProbVector jensen_lb(const BeliefState& belief) {
  const Eigen::Index n = belief.outcomes();
  const Eigen::VectorXd u = belief.utilities();
  const Eigen::MatrixXd& f = belief.factors();
  const Eigen::MatrixXd q = f * belief.cov() * f.transpose();

  Eigen::VectorXd lb(n);
  Eigen::VectorXd expo(n);
  for (Eigen::Index h = 0; h < n; ++h) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double quad = i == h ? 0.0 : q(i, i) + q(h, h) - 2.0 * q(i, h);
      expo[i] = u[i] - u[h] + 0.5 * quad;
    }
    const double mx = expo.maxCoeff();
    const double lse = mx + std::log((expo.array() - mx).exp().sum());
    lb[h] = std::max(std::exp(-lse), kProbFloor);
  }
  return {lb, ProbKind::JensenLowerBound, std::nullopt};
}

TiltedProbs cc2_tilt(const BeliefState& belief, double alpha) {
  if (belief.outcomes() != 2) throw Error(ErrorKind::Shape, "cc2_tilt requires exactly two outcomes");
  if (!(alpha > 0.0 && alpha < 0.5)) throw Error(ErrorKind::Domain, "cc2_tilt requires 0 < alpha < 0.5");
  const Eigen::VectorXd diff = (belief.factors().row(0) - belief.factors().row(1)).transpose();
  const double var = diff.dot(belief.cov() * diff);
  const double sigma = std::sqrt(std::max(0.0, var));
  const double shift = normal_quantile(1.0 - alpha) * sigma;
  const Eigen::VectorXd u = belief.utilities();
  const double d = u[0] - u[1];

  TiltedProbs t;
  t.pi_h1 = logistic(shift + d);
  t.pi_l2 = logistic(-(shift + d));
  t.pi_l1 = logistic(d - shift);
  t.pi_h2 = logistic(shift - d);
  t.sigma = sigma;
  t.alpha = alpha;
  return t;
}

ScenarioSet sample_scenarios(const BeliefState& belief, Eigen::Index count, RandomStream& stream) {
  if (count < 1) throw Error(ErrorKind::Domain, "sample_scenarios: count must be positive");
  ScenarioSet set;
  set.seed = stream.seed();
  set.substream = stream.substream();
  const Eigen::Index n = belief.outcomes();
  set.scenarios.resize(count, n);

  MvnSampler sampler(belief.beta_hat(), belief.cov());
  Eigen::VectorXd beta(belief.beta_hat().size());
  Eigen::VectorXd u(n), p(n);
  for (Eigen::Index s = 0; s < count; ++s) {
    sampler.draw(stream, beta);
    u.noalias() = belief.factors() * beta;
    softmax_into(u, p);
    set.scenarios.row(s) = p.transpose();
  }
  return set;
}

}  // namespace kellyuq
