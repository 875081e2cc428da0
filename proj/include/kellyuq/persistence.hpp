#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kellyuq/allocator.hpp"
#include "kellyuq/experiments.hpp"
#include "kellyuq/mlogit.hpp"

namespace kellyuq {

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// History CSV: header `race_id,horse_id,won,f1,...,fm`, one row per
/// runner, exactly one `won = 1` per race.  Races keep the order in which
/// their id first appears.  Errors are Error(Input) with the line number.
RaceHistory read_history_csv(std::istream& in);
RaceHistory load_history_csv(const std::string& path);

/// Serialized FittedModel.  Every double is written in shortest round-trip
/// form, so reading a written model reproduces it bit for bit.
std::string model_to_json(const FittedModel& model, std::size_t races);
FittedModel model_from_json(const std::string& text);

/// A race to wager on: per-runner factor rows plus odds and wealth.
struct RaceSpec {
  Eigen::MatrixXd factors;
  RaceInstance race;
};

RaceSpec race_spec_from_json(const std::string& text);

std::string wager_to_json(const WagerAllocation& wager, const ModelSpec& spec);

enum class Budget { Full, Ci };

/// Suite description: top-level seed and defaults plus one entry per
/// experiment.  Experiment i gets seed + i unless it sets its own seed.
/// Under Budget::Ci trials, samples and scenarios are capped at 200,
/// 1e5 and 500.
std::vector<ExperimentConfig> suite_from_json(const std::string& text, Budget budget,
                                              std::optional<std::uint64_t> seed_override = std::nullopt);

std::string read_text_file(const std::string& path);

}  // namespace kellyuq
