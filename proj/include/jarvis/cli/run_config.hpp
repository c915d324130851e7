#pragma once

#include "jarvis/longterm/longterm.hpp"
#include "jarvis/relation_model/config.hpp"
#include "jarvis/set_matching/matching.hpp"
#include "jarvis/synthdata/scenario.hpp"
#include "jarvis/training/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace jarvis {

/// Model size used when a run config does not say otherwise.
ModelConfig desk_model_config();

/// Every knob of a run in one document. The top-level seed feeds the
/// scenario, model initialization, shuffling and the aggregation phase.
struct RunConfig {
  std::uint64_t seed = 7;
  ScenarioConfig scenario;
  ModelConfig model = desk_model_config();
  LossConfig loss;
  OptimizerConfig optimizer;
  /// Windowing of the long-term phase and of long-term evaluation.
  WindowingConfig windowing;
  AggregationTrainConfig aggregation;
  struct Paths {
    std::string dataset;
    std::string output;
  } paths;

  void validate() const;
  TrainOptions train_options(int threads) const;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep defaults; unknown keys and nested seeds are rejected.
/// Model class count and feature dims follow the scenario unless given.
RunConfig run_config_from_json(const nlohmann::json& j);
/// ConfigError naming the path when the file is missing or malformed.
RunConfig load_run_config(const std::filesystem::path& path);

/// JARVIS_THREADS if set to a positive integer, else 1.
int default_threads();

}  // namespace jarvis
