#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace jarvis {

enum class Variant { Unified, DecoderOnly, EncoderDecoder };
enum class Activation { GELU };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Relation-model hyperparameters. Defaults are the full-size architecture;
/// desk-scale runs override them through the run configuration.
struct ModelConfig {
  int embed_dim = 256;
  int layers = 6;
  int heads = 8;
  int ffn_dim = 1024;
  double dropout = 0.1;
  double attention_dropout = 0.1;
  bool pre_norm = true;
  Activation activation = Activation::GELU;
  Variant variant = Variant::Unified;
  int num_classes = 12;
  /// C
  int actor_feature_dim = 32;
  /// C'
  int scene_feature_dim = 32;
  /// false drops scene tokens entirely (actor-only ablation).
  bool use_scene = true;
  double ln_eps = 1e-5;

  void validate() const;
  int head_dim() const { return embed_dim / heads; }
};

nlohmann::json to_json(const ModelConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");

}  // namespace jarvis
