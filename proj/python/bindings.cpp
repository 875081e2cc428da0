#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kellyuq/allocator.hpp"
#include "kellyuq/beliefs.hpp"
#include "kellyuq/error.hpp"
#include "kellyuq/experiments.hpp"
#include "kellyuq/mlogit.hpp"
#include "kellyuq/persistence.hpp"
#include "kellyuq/stochastics.hpp"

namespace py = pybind11;
using namespace kellyuq;

namespace {

RaceHistory make_history(const std::vector<Eigen::MatrixXd>& factors, const std::vector<Eigen::Index>& winners) {
  if (factors.size() != winners.size()) throw Error(ErrorKind::Shape, "one winner per race is required");
  std::vector<RaceRecord> races;
  for (std::size_t r = 0; r < factors.size(); ++r) races.push_back({factors[r], winners[r]});
  return RaceHistory(std::move(races));
}

py::dict report_dict(const WagerAllocation& w) {
  py::dict d;
  d["stakes"] = w.stakes;
  d["objective"] = w.objective;
  d["iterations"] = w.report.iterations;
  d["kkt_residual"] = w.report.kkt_residual;
  d["t_value"] = w.report.t_value;
  d["active_scenarios"] = w.report.active_scenarios;
  d["zero_fallback"] = w.report.zero_fallback;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Kelly wagers with uncertain multinomial-logit probabilities";

  static py::exception<Error> base(m, "KellyError");
  static py::exception<Error> separation(m, "SeparationError", base.ptr());
  static py::exception<Error> solver(m, "SolverError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Separation) py::set_error(separation, e.what());
      else if (e.kind() == ErrorKind::Solver || e.kind() == ErrorKind::NonConvergence) py::set_error(solver, e.what());
      else py::set_error(base, e.what());
    }
  });

  m.def("normal_quantile", &normal_quantile, py::arg("p"));
  m.def("normal_cdf", &normal_cdf, py::arg("z"));

  m.def(
      "sample_mvn",
      [](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Eigen::Index count, std::uint64_t seed,
         std::uint64_t substream) {
        RandomStream s(seed, substream);
        return sample_mvn(mean, cov, count, s);
      },
      py::arg("mean"), py::arg("cov"), py::arg("count"), py::arg("seed") = 0, py::arg("substream") = 0);

  m.def(
      "log_likelihood",
      [](const Eigen::VectorXd& beta, const std::vector<Eigen::MatrixXd>& f, const std::vector<Eigen::Index>& w) {
        return log_likelihood(beta, make_history(f, w));
      },
      py::arg("beta"), py::arg("factors"), py::arg("winners"));
  m.def(
      "score",
      [](const Eigen::VectorXd& beta, const std::vector<Eigen::MatrixXd>& f, const std::vector<Eigen::Index>& w) {
        return score(beta, make_history(f, w));
      },
      py::arg("beta"), py::arg("factors"), py::arg("winners"));
  m.def(
      "neg_hessian",
      [](const Eigen::VectorXd& beta, const std::vector<Eigen::MatrixXd>& f, const std::vector<Eigen::Index>& w) {
        return neg_hessian(beta, make_history(f, w));
      },
      py::arg("beta"), py::arg("factors"), py::arg("winners"));
  m.def(
      "fit_mle",
      [](const std::vector<Eigen::MatrixXd>& f, const std::vector<Eigen::Index>& w) {
        const FittedModel fm = fit_mle(make_history(f, w));
        py::dict d;
        d["beta_hat"] = fm.beta_hat;
        d["curvature"] = fm.curvature;
        d["score_var"] = fm.score_var;
        d["sandwich"] = fm.sandwich;
        d["converged"] = fm.converged;
        d["grad_norm"] = fm.grad_norm;
        d["iterations"] = fm.iterations;
        return d;
      },
      py::arg("factors"), py::arg("winners"), "Winners are 0-based row indices.");

  m.def(
      "point_probs",
      [](const Eigen::VectorXd& b, const Eigen::MatrixXd& cov, const Eigen::MatrixXd& f) {
        return point_probs(BeliefState(b, cov, f)).probs;
      },
      py::arg("beta_hat"), py::arg("cov"), py::arg("factors"));
  m.def(
      "mc_probs",
      [](const Eigen::VectorXd& b, const Eigen::MatrixXd& cov, const Eigen::MatrixXd& f, Eigen::Index samples,
         std::uint64_t seed) {
        RandomStream s = StreamPlan{seed, 0}.monte_carlo();
        const ProbVector p = mc_probs(BeliefState(b, cov, f), samples, s);
        return py::make_tuple(p.probs, *p.mc_std_err);
      },
      py::arg("beta_hat"), py::arg("cov"), py::arg("factors"), py::arg("samples"), py::arg("seed") = 0,
      "Returns (probs, standard errors).");
  m.def(
      "jensen_lb",
      [](const Eigen::VectorXd& b, const Eigen::MatrixXd& cov, const Eigen::MatrixXd& f) {
        return jensen_lb(BeliefState(b, cov, f)).probs;
      },
      py::arg("beta_hat"), py::arg("cov"), py::arg("factors"));
  m.def(
      "cc2_tilt",
      [](const Eigen::VectorXd& b, const Eigen::MatrixXd& cov, const Eigen::MatrixXd& f, double alpha) {
        const TiltedProbs t = cc2_tilt(BeliefState(b, cov, f), alpha);
        py::dict d;
        d["pi_h1"] = t.pi_h1;
        d["pi_l2"] = t.pi_l2;
        d["pi_l1"] = t.pi_l1;
        d["pi_h2"] = t.pi_h2;
        d["sigma"] = t.sigma;
        return d;
      },
      py::arg("beta_hat"), py::arg("cov"), py::arg("factors"), py::arg("alpha"));

  m.def(
      "solve_standard",
      [](const Eigen::VectorXd& probs, const Eigen::VectorXd& odds, double wealth) {
        return report_dict(solve_standard(given_probs(probs), RaceInstance{odds, wealth}));
      },
      py::arg("probs"), py::arg("odds"), py::arg("wealth") = 1.0);
  m.def(
      "expected_log_wealth",
      [](const Eigen::VectorXd& stakes, const Eigen::VectorXd& probs, const Eigen::VectorXd& odds, double wealth) {
        return expected_log_wealth(stakes, given_probs(probs), RaceInstance{odds, wealth});
      },
      py::arg("stakes"), py::arg("probs"), py::arg("odds"), py::arg("wealth") = 1.0);
  m.def(
      "wager",
      [](const std::string& variant, const Eigen::VectorXd& b, const Eigen::MatrixXd& cov, const Eigen::MatrixXd& f,
         const Eigen::VectorXd& odds, double wealth, double alpha, double fraction, Eigen::Index samples,
         Eigen::Index scenarios, std::uint64_t seed) {
        ModelSpec spec;
        spec.variant = variant_from_string(variant);
        spec.alpha = alpha;
        spec.fraction = fraction;
        spec.samples = samples;
        spec.scenarios = scenarios;
        return report_dict(allocate(spec, BeliefState(b, cov, f), RaceInstance{odds, wealth}, StreamPlan{seed, 0}));
      },
      py::arg("variant"), py::arg("beta_hat"), py::arg("cov"), py::arg("factors"), py::arg("odds"),
      py::arg("wealth") = 1.0, py::arg("alpha") = 0.1, py::arg("fraction") = 0.5, py::arg("samples") = 1000000,
      py::arg("scenarios") = 1000, py::arg("seed") = 0);

  m.def(
      "simulate",
      [](const std::string& config_json, const std::string& budget, unsigned threads) {
        if (budget != "ci" && budget != "full") throw Error(ErrorKind::Input, "budget must be 'full' or 'ci'");
        const auto configs = suite_from_json(config_json, budget == "ci" ? Budget::Ci : Budget::Full);
        py::gil_scoped_release release;
        return results_csv(run_suite(configs, threads));
      },
      py::arg("config_json"), py::arg("budget") = "ci", py::arg("threads") = 1,
      "Runs an experiment suite described by a JSON string; returns the CSV table.");
}
