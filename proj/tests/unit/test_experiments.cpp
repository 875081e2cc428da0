#include <algorithm>
#include <cmath>
#include <string>

#include "doctest.h"

#include "kellyuq/beliefs.hpp"
#include "kellyuq/error.hpp"
#include "kellyuq/experiments.hpp"

using namespace kellyuq;
using Eigen::VectorXd;

namespace {

ExperimentConfig small(std::string name, Eigen::Index n, double odds, Eigen::Index trials) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.n = n;
  c.odds = odds;
  c.trials = trials;
  c.samples = 5000;
  c.scenarios = 100;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("sigma_cap") {
  CHECK(std::abs(sigma_cap(1.959964) - 1.0) <= 1e-6);
  CHECK(sigma_cap(-1.959964) == sigma_cap(1.959964));
  CHECK(sigma_cap(0.0) == 0.0);
}

TEST_CASE("gen_trial") {
  const ExperimentConfig c = small("E", 5, 2.0, 1);
  RandomStream a(7, 3), b(7, 3);
  const TrialData d = gen_trial(c, a);
  const TrialData e = gen_trial(c, b);
  CHECK(d.beta_hat == e.beta_hat);
  CHECK(d.factors == e.factors);
  CHECK(d.true_probs == e.true_probs);
  CHECK(d.factors.rows() == 5);
  CHECK(d.factors.cols() == 10);
  CHECK(std::abs(d.true_probs.sum() - 1.0) <= 1e-12);
  for (Eigen::Index i = 0; i < c.m; ++i) {
    CHECK(d.cov(i, i) >= 0.0);
    CHECK(d.cov(i, i) <= std::pow(sigma_cap(d.beta_hat[i]), 2) * (1 + 1e-15));
  }
  CHECK(d.cov.isDiagonal());

  ExperimentConfig z = c;
  z.zero_uncertainty = true;
  RandomStream s(7, 3);
  const TrialData f = gen_trial(z, s);
  CHECK(f.beta_true == f.beta_hat);
  CHECK(f.true_probs == point_probs(BeliefState(f.beta_hat, f.cov, f.factors)).probs);
}

TEST_CASE("expected_log_return") {
  WagerAllocation w;
  w.stakes = VectorXd::Zero(2);
  const RaceInstance race{VectorXd::Constant(2, 2.0), 1.0};
  CHECK(expected_log_return(w, VectorXd::Constant(2, 0.5), race) == 0.0);
  w.stakes = (VectorXd(2) << 0.2, 0.0).finished();
  const RaceInstance classic{(VectorXd(2) << 2.0, 1.2).finished(), 1.0};
  CHECK(expected_log_return(w, (VectorXd(2) << 0.6, 0.4).finished(), classic) ==
        doctest::Approx(0.020136).epsilon(1e-5));
}

TEST_CASE("model rows follow the table layout") {
  const auto rows = model_rows({0.4, 0.25, 0.1});
  REQUIRE(rows.size() == 11);
  CHECK(rows[0].model == "T");
  CHECK(rows[4].model == "Emc");
  CHECK(rows[5].model == "CCx");
  CHECK(*rows[7].alpha == 0.1);
  CHECK(rows[8].model == "ECCx");
}

TEST_CASE("config validation") {
  ExperimentConfig c = small("E", 2, 1.1, 1);
  c.alphas = {0.5};
  CHECK_THROWS_AS(c.validate(), Error);
  c = small("E", 1, 1.1, 1);
  CHECK_THROWS_AS(c.validate(), Error);
  c = small("E", 2, 1.1, 0);
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("T dominates, F is half of S, totals are trial sums") {
  for (const auto& c : {small("E1", 2, 1.1, 40), small("E3", 6, 2.0, 15)}) {
    const ExperimentResult r = run_experiment(c);
    for (Eigen::Index k = 0; k < r.per_trial.rows(); ++k) {
      for (Eigen::Index v = 1; v < r.per_trial.cols(); ++v) CHECK(r.per_trial(k, 0) >= r.per_trial(k, v) - 1e-6);
    }
    for (Eigen::Index v = 0; v < r.per_trial.cols(); ++v) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < r.per_trial.rows(); ++k) s += r.per_trial(k, v);
      CHECK(s == r.totals[v]);
    }
    for (Eigen::Index k = 0; k < 5; ++k) {
      const TrialEvaluation ev = evaluate_trial(c, k);
      CHECK(ev.wagers[2].stakes == 0.5 * ev.wagers[1].stakes);
      CHECK(ev.returns[0] == r.per_trial(k, 0));
    }
  }
}

TEST_CASE("zero uncertainty collapses the uncertainty-aware models") {
  for (Eigen::Index n : {2, 5}) {
    ExperimentConfig c = small("Z", n, n == 2 ? 1.2 : 2.0, 6);
    c.zero_uncertainty = true;
    const ExperimentResult r = run_experiment(c);
    const double s = r.totals[1];
    for (Eigen::Index v = 3; v < r.totals.size(); ++v) {
      INFO("row " << v);
      CHECK(std::abs(r.totals[v] - s) <= 1e-6);
    }
  }
}

TEST_CASE("run_experiment does not depend on the worker count") {
  const ExperimentConfig c = small("E3", 4, 2.0, 24);
  const ExperimentResult one = run_experiment(c, 1);
  const ExperimentResult four = run_experiment(c, 4);
  CHECK(one.per_trial == four.per_trial);
  CHECK(one.totals == four.totals);
}

TEST_CASE("run_suite sums and CSV") {
  const ExperimentConfig a = small("A", 2, 1.2, 8), b = small("B", 3, 2.0, 5);
  const ResultsTable single = run_suite({a});
  CHECK(single.sum == single.totals.col(0));

  const ResultsTable ab = run_suite({a, b}, 2);
  const ResultsTable ba = run_suite({b, a}, 2);
  CHECK(ab.sum == ba.sum);
  CHECK(ab.totals.col(0) == ba.totals.col(1));
  CHECK(ab.row_index("ECCx", 0.1) == 10);
  CHECK_THROWS_AS(ab.row_index("nope"), Error);

  const std::string csv = results_csv(ab);
  CHECK(csv.rfind("model,alpha,A,B,Sum\nT,,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);
  CHECK(csv.find("CCx,0.25,") != std::string::npos);
  CHECK(results_json(ab).find("\"kellyuq.results/1\"") != std::string::npos);

  ExperimentConfig other = b;
  other.alphas = {0.3};
  CHECK_THROWS_AS(run_suite({a, other}), Error);
  CHECK_THROWS_AS(run_suite({a, a}), Error);
}
