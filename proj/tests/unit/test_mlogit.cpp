#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "kellyuq/error.hpp"
#include "kellyuq/mlogit.hpp"

using namespace kellyuq;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

RaceRecord race(std::initializer_list<double> column, Eigen::Index winner) {
  RaceRecord r;
  r.factors = Eigen::Map<const VectorXd>(column.begin(), static_cast<Eigen::Index>(column.size()));
  r.winner = winner;
  return r;
}

RaceHistory two_races() { return RaceHistory({race({1, 0}, 0), race({1, 0}, 1)}); }

ErrorKind kind_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Input;
}

}  // namespace

TEST_CASE("log_likelihood hand values") {
  CHECK(log_likelihood(VectorXd::Zero(1), RaceHistory({race({1, 0}, 0)})) == doctest::Approx(-std::log(2.0)));
  std::mt19937_64 rng(1);
  const RaceHistory h = oracle::random_history(rng, 3, 7, 6);
  double expected = 0.0;
  for (const auto& r : h.races()) expected -= std::log(static_cast<double>(r.factors.rows()));
  CHECK(log_likelihood(VectorXd::Zero(3), h) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("log_likelihood is invariant to a per-race shift") {
  std::mt19937_64 rng(2);
  const RaceHistory h = oracle::random_history(rng, 4, 10, 8);
  std::vector<RaceRecord> shifted = h.races();
  for (auto& r : shifted) r.factors.rowwise() += oracle::random_vector(rng, 4, 3.0).transpose();
  const VectorXd beta = oracle::random_vector(rng, 4);
  CHECK(log_likelihood(beta, RaceHistory(shifted)) == doctest::Approx(log_likelihood(beta, h)).epsilon(1e-12));
}

TEST_CASE("log_likelihood survives huge utilities") {
  const RaceHistory h({race({1000, 0}, 1)});
  const double v = log_likelihood(VectorXd::Constant(1, 1.0), h);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-1000.0));
}

TEST_CASE("score and curvature on the two-race example") {
  const RaceHistory h = two_races();
  CHECK(std::abs(score(VectorXd::Zero(1), h)[0]) <= 1e-15);
  CHECK(neg_hessian(VectorXd::Zero(1), h)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(race_score(VectorXd::Zero(1), h.races()[0])[0] == doctest::Approx(0.5));
  CHECK(race_score(VectorXd::Zero(1), h.races()[1])[0] == doctest::Approx(-0.5));
}

TEST_CASE("score doubles when the history is duplicated") {
  std::mt19937_64 rng(3);
  const RaceHistory h = oracle::random_history(rng, 3, 6, 5);
  std::vector<RaceRecord> twice = h.races();
  twice.insert(twice.end(), h.races().begin(), h.races().end());
  const VectorXd beta = oracle::random_vector(rng, 3);
  CHECK((score(beta, RaceHistory(twice)) - 2.0 * score(beta, h)).norm() <= 1e-12);
}

TEST_CASE("score and neg_hessian against finite differences") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = std::uniform_int_distribution<int>(1, 10)(rng);
    const int races = std::uniform_int_distribution<int>(1, 20)(rng);
    const RaceHistory h = oracle::random_history(rng, m, races, 8);
    const VectorXd beta = oracle::random_vector(rng, m, 0.5);
    const VectorXd g = score(beta, h);
    const VectorXd fd = oracle::fd_gradient([&](const VectorXd& b) { return log_likelihood(b, h); }, beta, 1e-5);
    CHECK((g - fd).norm() <= 1e-6 * std::max(1.0, g.norm()));

    const MatrixXd hess = neg_hessian(beta, h);
    MatrixXd fdh(m, m);
    for (int j = 0; j < m; ++j) {
      VectorXd a = beta, b = beta;
      a[j] += 1e-4;
      b[j] -= 1e-4;
      fdh.col(j) = -(score(a, h) - score(b, h)) / 2e-4;
    }
    CHECK((hess - fdh).norm() <= 1e-5 * std::max(1.0, hess.norm()));
    CHECK((hess - hess.transpose()).norm() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(hess).eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("shape errors") {
  const RaceHistory h = two_races();
  CHECK(kind_of([&] { log_likelihood(VectorXd::Zero(2), h); }) == ErrorKind::Shape);
  CHECK(kind_of([&] { score(VectorXd::Zero(3), h); }) == ErrorKind::Shape);
  CHECK(kind_of([&] { neg_hessian(VectorXd::Zero(0), h); }) == ErrorKind::Shape);
}

TEST_CASE("history validation") {
  CHECK_THROWS_AS(RaceHistory({race({1}, 0)}), Error);
  CHECK_THROWS_AS(RaceHistory({race({1, 0}, 2)}), Error);
  RaceRecord wide;
  wide.factors = MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(RaceHistory({race({1, 0}, 0), wide}), Error);
}

TEST_CASE("fit_mle two-race oracle") {
  const FittedModel fm = fit_mle(two_races());
  CHECK(fm.converged);
  CHECK(std::abs(fm.beta_hat[0]) <= 1e-8);
  CHECK(fm.curvature(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fm.score_var(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(fm.sandwich(0, 0) - 2.0) <= 1e-8);
  CHECK(fm.grad_norm <= 1e-8);
}

TEST_CASE("fit_mle detects separation") {
  const RaceHistory h({race({1, 0}, 0), race({0, 1}, 1)});
  CHECK(kind_of([&] { fit_mle(h); }) == ErrorKind::Separation);
}

TEST_CASE("fit_mle iteration cap carries the best iterate") {
  std::mt19937_64 rng(5);
  const RaceHistory h = oracle::random_history(rng, 2, 40, 4);
  FitOptions opts;
  opts.max_iterations = 1;
  try {
    fit_mle(h, opts);
    FAIL("expected non-convergence");
  } catch (const IterateError& e) {
    CHECK(e.kind() == ErrorKind::NonConvergence);
    CHECK(e.best_iterate().size() == 2);
  }
}

TEST_CASE("fit_mle is invariant to race order and stationary") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const RaceHistory h = oracle::random_history(rng, 3, 60, 6);
    const FittedModel a = fit_mle(h);
    std::vector<RaceRecord> rev(h.races().rbegin(), h.races().rend());
    const FittedModel b = fit_mle(RaceHistory(rev));
    CHECK((a.beta_hat - b.beta_hat).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(score(a.beta_hat, h).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((a.sandwich - a.sandwich.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((a.curvature - a.curvature.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(a.score_var).eigenvalues().minCoeff() >= -1e-10);
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(a.curvature).eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("sandwich approaches the inverse information under the true model") {
  // R = 1e4 races drawn from the logit model itself.
  std::mt19937_64 rng(7);
  const int m = 2;
  VectorXd beta(m);
  beta << 0.8, -0.5;
  std::vector<RaceRecord> races;
  for (int r = 0; r < 10000; ++r) {
    RaceRecord rec;
    rec.factors.resize(4, m);
    for (int i = 0; i < 4; ++i) rec.factors.row(i) = oracle::random_vector(rng, m).transpose();
    const VectorXd u = rec.factors * beta;
    const VectorXd p = (u.array() - u.maxCoeff()).exp();
    std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
    rec.winner = pick(rng);
    races.push_back(std::move(rec));
  }
  const FittedModel fm = fit_mle(RaceHistory(std::move(races)));
  const MatrixXd inv = fm.curvature.inverse();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      // Off-diagonal entries near zero are compared on the diagonal scale.
      const double scale = std::max(std::abs(inv(i, j)), std::sqrt(inv(i, i) * inv(j, j)) * 0.1);
      INFO("cell " << i << "," << j);
      CHECK(std::abs(fm.sandwich(i, j) - inv(i, j)) <= 0.25 * scale);
    }
}

TEST_CASE("sandwich_covariance rejects singular information") {
  const RaceHistory h({race({0, 0}, 0), race({0, 0}, 1)});
  CHECK(kind_of([&] { sandwich_covariance(VectorXd::Zero(1), h); }) == ErrorKind::SingularInformation);
}
