#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "kellyuq/error.hpp"

namespace kellyuq::cli {

enum ExitCode : int { kOk = 0, kInput = 2, kSeparation = 3, kMisuse = 4, kSolver = 5 };

/// The cmd_* functions return kOk or throw kellyuq::Error; run() maps the
/// error kind through exit_code.
int exit_code(ErrorKind kind);

int cmd_fit(const std::string& history_path, const std::string& model_path, std::ostream& out);

struct WagerArgs {
  std::string model_path;
  std::string race_path;
  std::string variant = "S";
  double alpha = 0.1;
  double fraction = 0.5;
  long long samples = 1000000;
  long long scenarios = 1000;
  std::uint64_t seed = 0;
  std::optional<std::string> out_path;
};

int cmd_wager(const WagerArgs& args, std::ostream& out);

struct EstimateArgs {
  std::string model_path;
  std::string race_path;
  long long samples = 1000000;
  std::uint64_t seed = 0;
};

int cmd_estimate(const EstimateArgs& args, std::ostream& out);

struct SimulateArgs {
  std::string config_path;
  std::string csv_path;
  std::optional<std::string> json_path;
  unsigned threads = 1;
  std::string budget = "full";
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out);

/// Whole command line: parses flags, applies KELLY_SEED, dispatches and maps
/// errors to exit codes.  Messages go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kellyuq::cli
