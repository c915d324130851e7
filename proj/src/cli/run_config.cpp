#include "jarvis/cli/run_config.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/util/json_fields.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>

namespace jarvis {

ModelConfig desk_model_config() {
  ModelConfig m;
  m.embed_dim = 64;
  m.layers = 2;
  m.heads = 4;
  m.ffn_dim = 256;
  return m;
}

void RunConfig::validate() const {
  scenario.validate();
  model.validate();
  loss.validate();
  optimizer.validate();
  windowing.validate();
  aggregation.validate();
  if (model.num_classes != scenario.num_classes) throw ConfigError("model.num_classes must equal scenario.num_classes");
  if (model.actor_feature_dim != scenario.actor_feature_dim || model.scene_feature_dim != scenario.scene_feature_dim)
    throw ConfigError("model feature dims must equal the scenario feature dims");
}

TrainOptions RunConfig::train_options(int threads) const {
  TrainOptions o;
  o.model = model;
  o.loss = loss;
  o.optimizer = optimizer;
  o.num_proposals = scenario.num_proposals;
  o.seed = seed;
  o.threads = threads;
  return o;
}

namespace {

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  return nlohmann::json{{"seed", c.seed},
                        {"scenario", without_seed(to_json(c.scenario))},
                        {"model", to_json(c.model)},
                        {"loss", to_json(c.loss)},
                        {"optimizer", to_json(c.optimizer)},
                        {"windowing", to_json(c.windowing)},
                        {"aggregation", without_seed(to_json(c.aggregation))},
                        {"paths", {{"dataset", c.paths.dataset}, {"output", c.paths.output}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  FieldReader r(j, "");
  r.read("seed", c.seed);
  auto no_seed = [](const nlohmann::json& sub, const std::string& path) {
    if (sub.is_object() && sub.contains("seed"))
      throw ConfigError("'" + path + ".seed' is not allowed; set the top-level seed");
  };
  if (const auto* s = r.sub("scenario")) {
    no_seed(*s, "scenario");
    c.scenario = scenario_config_from_json(*s);
  }
  c.scenario.seed = c.seed;
  c.model.num_classes = c.scenario.num_classes;
  c.model.actor_feature_dim = c.scenario.actor_feature_dim;
  c.model.scene_feature_dim = c.scenario.scene_feature_dim;
  if (const auto* s = r.sub("model")) {
    // fields absent from the document keep the scenario-derived values above
    nlohmann::json merged = to_json(c.model);
    for (auto it = s->begin(); s->is_object() && it != s->end(); ++it) merged[it.key()] = it.value();
    c.model = model_config_from_json(s->is_object() ? merged : *s);
  }
  if (const auto* s = r.sub("loss")) c.loss = loss_config_from_json(*s);
  if (const auto* s = r.sub("optimizer")) c.optimizer = optimizer_config_from_json(*s);
  if (const auto* s = r.sub("windowing")) c.windowing = windowing_config_from_json(*s);
  if (const auto* s = r.sub("aggregation")) {
    no_seed(*s, "aggregation");
    c.aggregation = aggregation_train_config_from_json(*s);
  }
  c.aggregation.seed = c.seed;
  if (const auto* s = r.sub("paths")) {
    FieldReader p(*s, "paths");
    p.read("dataset", c.paths.dataset);
    p.read("output", c.paths.output);
    p.finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
}

int default_threads() {
  const char* env = std::getenv("JARVIS_THREADS");
  if (env == nullptr) return 1;
  int n = 0;
  const auto [end, ec] = std::from_chars(env, env + std::strlen(env), n);
  if (ec != std::errc{} || *end != '\0' || n < 1) return 1;
  return n;
}

}  // namespace jarvis
