#include "kellyuq/persistence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "kellyuq/error.hpp"

namespace kellyuq {

using json = nlohmann::ordered_json;

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Input, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v))
    throw Error(ErrorKind::Input, "line " + std::to_string(line) + ": '" + text + "' is not a finite number");
  return v;
}

Eigen::VectorXd to_vector(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorKind::Input, what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::Input, what + " must contain numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd to_matrix(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::Input, what + " must be a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw Error(ErrorKind::Input, what + " rows must have equal length");
    m.row(static_cast<Eigen::Index>(r)) = to_vector(j[r], what).transpose();
  }
  return m;
}

json from_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json from_matrix(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(from_vector(m.row(r).transpose()));
  return a;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Input, what + ": " + e.what());
  }
}

void check_schema(const json& j, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorKind::Input, what + " must be a JSON object");
  if (j.contains("schema_version") && j["schema_version"] != 1)
    throw Error(ErrorKind::Input, what + ": unsupported schema_version");
}

}  // namespace

RaceHistory read_history_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split_csv(line);
      break;
    }
  }
  if (header.empty()) throw Error(ErrorKind::Input, "line " + std::to_string(std::max<std::size_t>(lineno, 1)) + ": empty history file");
  if (header.size() < 4 || header[0] != "race_id" || header[1] != "horse_id" || header[2] != "won")
    throw Error(ErrorKind::Input, "line " + std::to_string(lineno) +
                                      ": header must be race_id,horse_id,won,f1,...,fm");
  const std::size_t m = header.size() - 3;

  struct Pending {
    std::vector<Eigen::RowVectorXd> rows;
    std::optional<Eigen::Index> winner;
    std::size_t first_line = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> races;

  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string at = "line " + std::to_string(lineno) + ": ";
    if (fields.size() != header.size())
      throw Error(ErrorKind::Input, at + "expected " + std::to_string(header.size()) + " fields, found " +
                                        std::to_string(fields.size()));
    if (fields[0].empty()) throw Error(ErrorKind::Input, at + "empty race_id");
    auto [it, inserted] = races.try_emplace(fields[0]);
    if (inserted) {
      order.push_back(fields[0]);
      it->second.first_line = lineno;
    }
    Pending& race = it->second;
    if (fields[2] != "0" && fields[2] != "1") throw Error(ErrorKind::Input, at + "won must be 0 or 1");
    if (fields[2] == "1") {
      if (race.winner) throw Error(ErrorKind::Input, at + "race '" + fields[0] + "' has more than one winner");
      race.winner = static_cast<Eigen::Index>(race.rows.size());
    }
    Eigen::RowVectorXd v(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) v[static_cast<Eigen::Index>(j)] = parse_number(fields[3 + j], lineno);
    race.rows.push_back(std::move(v));
  }
  if (order.empty()) throw Error(ErrorKind::Input, "line " + std::to_string(lineno) + ": history has no races");

  std::vector<RaceRecord> records;
  for (const auto& id : order) {
    const Pending& p = races.at(id);
    const std::string at = "line " + std::to_string(p.first_line) + ": race '" + id + "' ";
    if (!p.winner) throw Error(ErrorKind::Input, at + "has no winner");
    if (p.rows.size() < 2) throw Error(ErrorKind::Input, at + "has fewer than two runners");
    RaceRecord rec;
    rec.factors.resize(static_cast<Eigen::Index>(p.rows.size()), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < p.rows.size(); ++i) rec.factors.row(static_cast<Eigen::Index>(i)) = p.rows[i];
    rec.winner = *p.winner;
    records.push_back(std::move(rec));
  }
  return RaceHistory(std::move(records));
}

RaceHistory load_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Input, "cannot open '" + path + "'");
  return read_history_csv(in);
}

std::string model_to_json(const FittedModel& model, std::size_t races) {
  json j;
  j["schema"] = "kellyuq.model/1";
  j["m"] = model.beta_hat.size();
  j["R"] = races;
  j["converged"] = model.converged;
  j["iterations"] = model.iterations;
  j["grad_norm"] = model.grad_norm;
  j["log_likelihood"] = model.log_likelihood;
  j["beta_hat"] = from_vector(model.beta_hat);
  j["curvature"] = from_matrix(model.curvature);
  j["score_var"] = from_matrix(model.score_var);
  j["sandwich"] = from_matrix(model.sandwich);
  return j.dump(2) + "\n";
}

FittedModel model_from_json(const std::string& text) {
  const json j = parse_json(text, "model file");
  if (!j.is_object() || j.value("schema", "") != "kellyuq.model/1")
    throw Error(ErrorKind::Input, "model file: missing or unsupported schema");
  try {
    FittedModel fm;
    fm.beta_hat = to_vector(j.at("beta_hat"), "beta_hat");
    fm.curvature = to_matrix(j.at("curvature"), "curvature");
    fm.score_var = to_matrix(j.at("score_var"), "score_var");
    fm.sandwich = to_matrix(j.at("sandwich"), "sandwich");
    fm.converged = j.at("converged").get<bool>();
    fm.iterations = j.at("iterations").get<int>();
    fm.grad_norm = j.at("grad_norm").get<double>();
    fm.log_likelihood = j.at("log_likelihood").get<double>();
    const Eigen::Index m = fm.beta_hat.size();
    if (j.at("m").get<Eigen::Index>() != m || fm.sandwich.rows() != m || fm.sandwich.cols() != m ||
        fm.curvature.rows() != m || fm.score_var.rows() != m)
      throw Error(ErrorKind::Input, "model file: inconsistent dimensions");
    return fm;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("model file: ") + e.what());
  }
}

RaceSpec race_spec_from_json(const std::string& text) {
  const json j = parse_json(text, "race spec");
  check_schema(j, "race spec");
  try {
    RaceSpec spec;
    spec.factors = to_matrix(j.at("factors"), "factors");
    spec.race.odds = to_vector(j.at("odds"), "odds");
    spec.race.wealth = j.value("wealth", 1.0);
    if (spec.factors.rows() != spec.race.odds.size())
      throw Error(ErrorKind::Input, "race spec: factors and odds disagree on the number of runners");
    try {
      spec.race.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::Input, std::string("race spec: ") + e.what());
    }
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("race spec: ") + e.what());
  }
}

std::string wager_to_json(const WagerAllocation& wager, const ModelSpec& spec) {
  json j;
  j["variant"] = to_string(spec.variant);
  if (spec.variant == Variant::F) j["fraction"] = spec.fraction;
  if (spec.variant == Variant::CC2 || spec.variant == Variant::CCN || spec.variant == Variant::ECC2 ||
      spec.variant == Variant::ECCN)
    j["alpha"] = spec.alpha;
  j["stakes"] = from_vector(wager.stakes);
  j["objective"] = wager.objective;
  json report;
  report["iterations"] = wager.report.iterations;
  report["kkt_residual"] = wager.report.kkt_residual;
  if (wager.report.t_value) report["t_value"] = *wager.report.t_value;
  if (wager.report.active_scenarios) report["active_scenarios"] = *wager.report.active_scenarios;
  report["zero_fallback"] = wager.report.zero_fallback;
  j["report"] = report;
  return j.dump(2) + "\n";
}

std::vector<ExperimentConfig> suite_from_json(const std::string& text, Budget budget,
                                              std::optional<std::uint64_t> seed_override) {
  const json j = parse_json(text, "experiment config");
  check_schema(j, "experiment config");
  try {
    const std::uint64_t seed = seed_override ? *seed_override : j.value("seed", std::uint64_t{0});
    const json defaults = j.value("defaults", json::object());
    const json& list = j.at("experiments");
    if (!list.is_array() || list.empty())
      throw Error(ErrorKind::Input, "experiment config: 'experiments' must be a non-empty array");

    std::vector<ExperimentConfig> out;
    for (std::size_t i = 0; i < list.size(); ++i) {
      json e = defaults;
      e.update(list[i]);
      ExperimentConfig c;
      c.name = e.at("name").get<std::string>();
      c.n = e.at("n").get<Eigen::Index>();
      c.odds = e.at("odds").get<double>();
      c.m = e.value("m", Eigen::Index{10});
      c.trials = e.value("trials", Eigen::Index{2500});
      c.alphas = e.value("alphas", std::vector<double>{0.4, 0.25, 0.1});
      c.fraction = e.value("fraction", 0.5);
      c.samples = e.value("samples", c.n == 2 ? Eigen::Index{1000000} : Eigen::Index{2000000});
      c.scenarios = e.value("scenarios", c.n <= 10 ? Eigen::Index{1000} : Eigen::Index{2000});
      c.seed = list[i].contains("seed") && !seed_override ? list[i]["seed"].get<std::uint64_t>()
                                                          : seed + static_cast<std::uint64_t>(i);
      if (budget == Budget::Ci) {
        c.trials = std::min<Eigen::Index>(c.trials, 200);
        c.samples = std::min<Eigen::Index>(c.samples, 100000);
        c.scenarios = std::min<Eigen::Index>(c.scenarios, 500);
      }
      c.validate();
      for (const auto& prev : out)
        if (prev.name == c.name) throw Error(ErrorKind::Input, "duplicate experiment name '" + c.name + "'");
      out.push_back(std::move(c));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("experiment config: ") + e.what());
  }
}

}  // namespace kellyuq
