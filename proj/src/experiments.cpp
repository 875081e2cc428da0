#include "kellyuq/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "kellyuq/beliefs.hpp"
#include "kellyuq/error.hpp"
#include "kellyuq/persistence.hpp"

namespace kellyuq {

void ExperimentConfig::validate() const {
  const std::string where = "experiment '" + name + "': ";
  if (n < 2) throw Error(ErrorKind::Input, where + "n must be at least 2");
  if (m < 1) throw Error(ErrorKind::Input, where + "m must be positive");
  if (trials < 1) throw Error(ErrorKind::Input, where + "trials must be positive");
  if (!(odds > 0.0) || !std::isfinite(odds)) throw Error(ErrorKind::Input, where + "odds must be positive");
  if (alphas.empty()) throw Error(ErrorKind::Input, where + "alpha list is empty");
  for (double a : alphas)
    if (!(a > 0.0 && a < 0.5)) throw Error(ErrorKind::Input, where + "alphas must lie in (0, 0.5)");
  if (samples < 1 || scenarios < 1) throw Error(ErrorKind::Input, where + "sample counts must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::Input, where + "fraction must lie in (0, 1]");
}

double sigma_cap(double beta_hat_component) {
  static const double q = normal_quantile(0.025);
  return -std::abs(beta_hat_component) / q;
}

TrialData gen_trial(const ExperimentConfig& config, RandomStream& stream) {
  const Eigen::Index m = config.m;
  TrialData d;
  d.beta_hat.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) d.beta_hat[i] = stream.next_normal();

  Eigen::VectorXd sigma(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double u = stream.next_uniform();
    sigma[i] = config.zero_uncertainty ? 0.0 : u * sigma_cap(d.beta_hat[i]);
  }
  d.cov = sigma.cwiseAbs2().asDiagonal();

  d.beta_true.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) d.beta_true[i] = d.beta_hat[i] + sigma[i] * stream.next_normal();

  const Eigen::MatrixXd f = sample_uniform(m, config.n, stream);
  d.factors = f.transpose();
  d.true_probs = softmax(d.factors * d.beta_true);
  return d;
}

double expected_log_return(const WagerAllocation& wager, const Eigen::VectorXd& true_probs,
                           const RaceInstance& race) {
  return expected_log_wealth(wager.stakes, given_probs(true_probs), race) - std::log(race.wealth);
}

std::vector<ModelRow> model_rows(const std::vector<double>& alphas) {
  std::vector<ModelRow> rows{{"T", {}}, {"S", {}}, {"F", {}}, {"Elb", {}}, {"Emc", {}}};
  for (double a : alphas) rows.push_back({"CCx", a});
  for (double a : alphas) rows.push_back({"ECCx", a});
  return rows;
}

TrialEvaluation evaluate_trial(const ExperimentConfig& config, Eigen::Index index) {
  const StreamPlan streams{config.seed, static_cast<std::uint64_t>(index)};
  RandomStream trial_stream = streams.trial();

  TrialEvaluation ev;
  ev.data = gen_trial(config, trial_stream);
  const BeliefState belief(ev.data.beta_hat, ev.data.cov, ev.data.factors);
  const RaceInstance race{Eigen::VectorXd::Constant(config.n, config.odds), 1.0};

  std::string current = "T";
  try {
    ev.wagers.push_back(solve_standard(given_probs(ev.data.true_probs), race));
    current = "S";
    const WagerAllocation standard = solve_standard(point_probs(belief), race);
    ev.wagers.push_back(standard);
    current = "F";
    WagerAllocation fractional = standard;
    fractional.stakes = config.fraction * standard.stakes;
    ev.wagers.push_back(fractional);
    current = "Elb";
    ev.wagers.push_back(solve_elb(jensen_lb(belief), race));
    current = "Emc";
    RandomStream mc_stream = streams.monte_carlo();
    const ProbVector mc = mc_probs(belief, config.samples, mc_stream);
    ev.wagers.push_back(solve_standard(mc, race));

    std::vector<WagerAllocation> ecc;
    if (config.n == 2) {
      for (double a : config.alphas) {
        const TiltedProbs tilt = cc2_tilt(belief, a);
        current = "CC2 alpha=" + std::to_string(a);
        ev.wagers.push_back(solve_cc2(tilt, race));
        current = "ECC2 alpha=" + std::to_string(a);
        ecc.push_back(solve_ecc2(mc, tilt, race));
      }
    } else {
      RandomStream sc_stream = streams.scenarios();
      const ScenarioSet scenarios = sample_scenarios(belief, config.scenarios, sc_stream);
      for (double a : config.alphas) {
        current = "CCN alpha=" + std::to_string(a);
        ev.wagers.push_back(solve_ccn(scenarios, race, a));
        current = "ECCN alpha=" + std::to_string(a);
        ecc.push_back(solve_eccn(mc, scenarios, race, a));
      }
    }
    ev.wagers.insert(ev.wagers.end(), ecc.begin(), ecc.end());
  } catch (const Error& e) {
    throw Error(ErrorKind::Solver, "experiment '" + config.name + "' trial " + std::to_string(index) +
                                       ", model " + current + ": " + e.what());
  }

  ev.returns.reserve(ev.wagers.size());
  for (const auto& w : ev.wagers) ev.returns.push_back(expected_log_return(w, ev.data.true_probs, race));
  return ev;
}

namespace {

double order_free_sum(std::vector<double> values) {
  // Summing in sorted order makes the result independent of input order.
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads) {
  config.validate();
  ExperimentResult result;
  result.config = config;
  result.rows = model_rows(config.alphas);
  const auto rows = static_cast<Eigen::Index>(result.rows.size());
  result.per_trial.resize(config.trials, rows);

  std::atomic<Eigen::Index> next{0};
  std::mutex error_mutex;
  Eigen::Index failed_trial = config.trials;
  std::string failure;

  const auto worker = [&] {
    for (;;) {
      const Eigen::Index k = next.fetch_add(1);
      if (k >= config.trials) return;
      try {
        const TrialEvaluation ev = evaluate_trial(config, k);
        for (Eigen::Index r = 0; r < rows; ++r) result.per_trial(k, r) = ev.returns[static_cast<std::size_t>(r)];
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (k < failed_trial) {
          failed_trial = k;
          failure = e.what();
        }
      }
    }
  };

  threads = std::max(1U, threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed_trial < config.trials) throw Error(ErrorKind::Solver, failure);

  // Fixed trial order.
  result.totals = Eigen::VectorXd::Zero(rows);
  for (Eigen::Index k = 0; k < config.trials; ++k) result.totals += result.per_trial.row(k).transpose();
  return result;
}

Eigen::Index ResultsTable::row_index(const std::string& model, std::optional<double> alpha) const {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].model != model) continue;
    if (alpha.has_value() != rows[r].alpha.has_value()) continue;
    if (alpha && std::abs(*alpha - *rows[r].alpha) > 1e-12) continue;
    return static_cast<Eigen::Index>(r);
  }
  throw Error(ErrorKind::Input, "no results row for model " + model);
}

ResultsTable run_suite(const std::vector<ExperimentConfig>& configs, unsigned threads) {
  if (configs.empty()) throw Error(ErrorKind::Input, "experiment list is empty");
  const auto start = std::chrono::steady_clock::now();
  ResultsTable table;
  table.rows = model_rows(configs.front().alphas);
  for (const auto& c : configs) {
    if (c.alphas != configs.front().alphas)
      throw Error(ErrorKind::Input, "all experiments must use the same alpha list");
    for (const auto& other : table.experiments)
      if (other.name == c.name) throw Error(ErrorKind::Input, "duplicate experiment name '" + c.name + "'");
    table.experiments.push_back(c);
  }
  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  const auto cols = static_cast<Eigen::Index>(configs.size());
  table.totals.resize(rows, cols);
  for (Eigen::Index e = 0; e < cols; ++e)
    table.totals.col(e) = run_experiment(configs[static_cast<std::size_t>(e)], threads).totals;

  table.sum.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    std::vector<double> values;
    for (Eigen::Index e = 0; e < cols; ++e) values.push_back(table.totals(r, e));
    table.sum[r] = order_free_sum(std::move(values));
  }
  table.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return table;
}

std::string results_csv(const ResultsTable& table) {
  std::string out = "model,alpha";
  for (const auto& e : table.experiments) out += "," + e.name;
  out += ",Sum\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    out += row.model + ",";
    if (row.alpha) out += format_double(*row.alpha);
    const auto ri = static_cast<Eigen::Index>(r);
    for (Eigen::Index e = 0; e < table.totals.cols(); ++e) out += "," + format_double(table.totals(ri, e));
    out += "," + format_double(table.sum[ri]) + "\n";
  }
  return out;
}

std::string results_json(const ResultsTable& table) {
  nlohmann::ordered_json j;
  j["schema"] = "kellyuq.results/1";
  nlohmann::ordered_json exps = nlohmann::ordered_json::array();
  for (const auto& e : table.experiments) {
    exps.push_back({{"name", e.name},
                    {"n", e.n},
                    {"odds", e.odds},
                    {"m", e.m},
                    {"trials", e.trials},
                    {"samples", e.samples},
                    {"scenarios", e.scenarios},
                    {"fraction", e.fraction},
                    {"seed", e.seed}});
  }
  j["experiments"] = exps;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    nlohmann::ordered_json row;
    row["model"] = table.rows[r].model;
    row["alpha"] = table.rows[r].alpha ? nlohmann::ordered_json(*table.rows[r].alpha) : nlohmann::ordered_json();
    std::vector<double> values(static_cast<std::size_t>(table.totals.cols()));
    for (Eigen::Index e = 0; e < table.totals.cols(); ++e) values[static_cast<std::size_t>(e)] = table.totals(ri, e);
    row["values"] = values;
    row["sum"] = table.sum[ri];
    rows.push_back(row);
  }
  j["rows"] = rows;
  j["runtime_seconds"] = table.runtime_seconds;
  return j.dump(2) + "\n";
}

}  // namespace kellyuq
