#include "commands.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kellyuq/allocator.hpp"
#include "kellyuq/beliefs.hpp"
#include "kellyuq/experiments.hpp"
#include "kellyuq/mlogit.hpp"
#include "kellyuq/persistence.hpp"

namespace kellyuq::cli {

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Input, "cannot write '" + path + "'");
  f << text;
  if (!f) throw Error(ErrorKind::Input, "failed writing '" + path + "'");
}

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_double(v[i]);
  return s;
}

struct Loaded {
  FittedModel model;
  RaceSpec spec;
};

Loaded load_model_and_race(const std::string& model_path, const std::string& race_path) {
  Loaded l{model_from_json(read_text_file(model_path)), race_spec_from_json(read_text_file(race_path))};
  if (l.spec.factors.cols() != l.model.beta_hat.size())
    throw Error(ErrorKind::Shape, "race factors have " + std::to_string(l.spec.factors.cols()) +
                                      " columns but the model has " + std::to_string(l.model.beta_hat.size()) +
                                      " coefficients");
  return l;
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("KELLY_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  std::uint64_t seed = 0;
  const std::string s(v);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorKind::Input, "KELLY_SEED must be a non-negative integer, got '" + s + "'");
  return seed;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Input: return kInput;
    case ErrorKind::Separation: return kSeparation;
    case ErrorKind::Domain:
    case ErrorKind::Shape: return kMisuse;
    case ErrorKind::Matrix:
    case ErrorKind::SingularInformation:
    case ErrorKind::NonConvergence:
    case ErrorKind::Solver: return kSolver;
  }
  return kSolver;
}

int cmd_fit(const std::string& history_path, const std::string& model_path, std::ostream& out) {
  const RaceHistory history = load_history_csv(history_path);
  const FittedModel model = fit_mle(history);
  write_file(model_path, model_to_json(model, history.races().size()));
  out << "beta_hat: " << join(model.beta_hat) << "\n";
  out << "grad_norm: " << format_double(model.grad_norm) << "\n";
  out << "sandwich_diag: " << join(model.sandwich.diagonal()) << "\n";
  return kOk;
}

int cmd_wager(const WagerArgs& args, std::ostream& out) {
  const Loaded l = load_model_and_race(args.model_path, args.race_path);
  ModelSpec spec;
  spec.variant = variant_from_string(args.variant);
  if (spec.variant == Variant::T)
    throw Error(ErrorKind::Domain, "variant T needs true probabilities; it exists only in simulations");
  spec.alpha = args.alpha;
  spec.fraction = args.fraction;
  spec.samples = args.samples;
  spec.scenarios = args.scenarios;
  const BeliefState belief(l.model.beta_hat, l.model.sandwich, l.spec.factors);
  const WagerAllocation wager = allocate(spec, belief, l.spec.race, StreamPlan{args.seed, 0});
  const std::string text = wager_to_json(wager, spec);
  if (args.out_path) write_file(*args.out_path, text);
  out << text;
  return kOk;
}

int cmd_estimate(const EstimateArgs& args, std::ostream& out) {
  if (args.samples < 1) throw Error(ErrorKind::Domain, "--samples must be positive");
  const Loaded l = load_model_and_race(args.model_path, args.race_path);
  const BeliefState belief(l.model.beta_hat, l.model.sandwich, l.spec.factors);
  RandomStream stream = StreamPlan{args.seed, 0}.monte_carlo();
  const ProbVector mc = mc_probs(belief, args.samples, stream);

  const auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::ordered_json j;
  j["point"] = vec(point_probs(belief).probs);
  j["mc"] = vec(mc.probs);
  j["mc_std_err"] = vec(*mc.mc_std_err);
  j["jensen_lb"] = vec(jensen_lb(belief).probs);
  j["samples"] = args.samples;
  j["seed"] = args.seed;
  out << j.dump(2) << "\n";
  return kOk;
}

int cmd_simulate(const SimulateArgs& args, std::ostream& out) {
  Budget budget = Budget::Full;
  if (args.budget == "ci") budget = Budget::Ci;
  else if (args.budget != "full") throw Error(ErrorKind::Input, "--budget must be 'full' or 'ci'");
  const auto configs = suite_from_json(read_text_file(args.config_path), budget, args.seed);
  const ResultsTable table = run_suite(configs, args.threads);
  write_file(args.csv_path, results_csv(table));
  if (args.json_path) write_file(*args.json_path, results_json(table));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.rows[r].model;
    if (table.rows[r].alpha) out << " alpha=" << format_double(*table.rows[r].alpha);
    out << " " << format_double(table.sum[static_cast<Eigen::Index>(r)]) << "\n";
  }
  return kOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kelly wagers under multinomial-logit parameter uncertainty", "kelly"};
  app.require_subcommand(1);

  std::string history, model_out;
  auto* fit = app.add_subcommand("fit", "fit the model to a race history CSV");
  fit->add_option("history", history, "race_id,horse_id,won,f1..fm CSV")->required();
  fit->add_option("model", model_out, "output model JSON")->required();

  WagerArgs w;
  std::string wager_out;
  std::optional<std::uint64_t> wager_seed;
  auto* wager = app.add_subcommand("wager", "stakes for one race");
  wager->add_option("model", w.model_path)->required();
  wager->add_option("race", w.race_path)->required();
  wager->add_option("--variant", w.variant, "S F Elb Emc CC2 CCN ECC2 ECCN")->capture_default_str();
  wager->add_option("--alpha", w.alpha)->capture_default_str();
  wager->add_option("--fraction", w.fraction)->capture_default_str();
  wager->add_option("--samples", w.samples)->capture_default_str();
  wager->add_option("--scenarios", w.scenarios)->capture_default_str();
  wager->add_option("--seed", wager_seed);
  wager->add_option("--out", wager_out, "also write the JSON here");

  EstimateArgs e;
  std::optional<std::uint64_t> estimate_seed;
  auto* estimate = app.add_subcommand("estimate", "point, Monte Carlo and Jensen probabilities for a race");
  estimate->add_option("model", e.model_path)->required();
  estimate->add_option("race", e.race_path)->required();
  estimate->add_option("--samples", e.samples)->capture_default_str();
  estimate->add_option("--seed", estimate_seed);

  SimulateArgs s;
  std::string json_out;
  auto* simulate = app.add_subcommand("simulate", "run the experiment suite");
  simulate->add_option("config", s.config_path)->required();
  simulate->add_option("csv", s.csv_path)->required();
  simulate->add_option("--json", json_out);
  simulate->add_option("--threads", s.threads)->capture_default_str();
  simulate->add_option("--budget", s.budget, "full or ci")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    std::ostringstream msg, help;
    const int rc = app.exit(pe, help, msg);
    out << help.str();
    err << msg.str();
    return rc == 0 ? kOk : kInput;
  }

  try {
    // Explicit --seed wins; KELLY_SEED replaces every other seed.
    const std::optional<std::uint64_t> env = env_seed();
    if (*fit) return cmd_fit(history, model_out, out);
    if (*wager) {
      w.seed = wager_seed ? *wager_seed : env.value_or(0);
      if (!wager_out.empty()) w.out_path = wager_out;
      return cmd_wager(w, out);
    }
    if (*estimate) {
      e.seed = estimate_seed ? *estimate_seed : env.value_or(0);
      return cmd_estimate(e, out);
    }
    if (!json_out.empty()) s.json_path = json_out;
    s.seed = env;
    return cmd_simulate(s, out);
  } catch (const Error& ex) {
    err << "kelly: " << ex.what() << "\n";
    return exit_code(ex.kind());
  } catch (const std::exception& ex) {
    err << "kelly: " << ex.what() << "\n";
    return kSolver;
  }
}

}  // namespace kellyuq::cli
