#include "jarvis/relation_model/config.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/util/json_fields.hpp"

namespace jarvis {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Unified:
      return "unified";
    case Variant::DecoderOnly:
      return "decoder_only";
    case Variant::EncoderDecoder:
      return "encoder_decoder";
  }
  return "unified";
}

Variant parse_variant(const std::string& s) {
  if (s == "unified") return Variant::Unified;
  if (s == "decoder_only" || s == "dec") return Variant::DecoderOnly;
  if (s == "encoder_decoder" || s == "enc_dec") return Variant::EncoderDecoder;
  throw ConfigError("unknown variant '" + s + "' (expected unified, decoder_only, encoder_decoder)");
}

void ModelConfig::validate() const {
  if (embed_dim <= 0 || heads <= 0) throw ConfigError("embed_dim and heads must be positive");
  if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
  if (embed_dim % 2 != 0) throw ConfigError("embed_dim must be even for the positional encoding");
  if (layers < 0) throw ConfigError("layers must be >= 0");
  if (ffn_dim <= 0) throw ConfigError("ffn_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) throw ConfigError("attention_dropout must lie in [0, 1)");
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  if (actor_feature_dim <= 0 || scene_feature_dim <= 0) throw ConfigError("feature dims must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  if (!use_scene && variant != Variant::Unified) throw ConfigError("the actor-only ablation needs the unified variant");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"embed_dim", c.embed_dim},
                        {"layers", c.layers},
                        {"heads", c.heads},
                        {"ffn_dim", c.ffn_dim},
                        {"dropout", c.dropout},
                        {"attention_dropout", c.attention_dropout},
                        {"pre_norm", c.pre_norm},
                        {"activation", "gelu"},
                        {"variant", to_string(c.variant)},
                        {"num_classes", c.num_classes},
                        {"actor_feature_dim", c.actor_feature_dim},
                        {"scene_feature_dim", c.scene_feature_dim},
                        {"use_scene", c.use_scene},
                        {"ln_eps", c.ln_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
  ModelConfig c;
  FieldReader r(j, path);
  r.read("embed_dim", c.embed_dim);
  r.read("layers", c.layers);
  r.read("heads", c.heads);
  r.read("ffn_dim", c.ffn_dim);
  r.read("dropout", c.dropout);
  r.read("attention_dropout", c.attention_dropout);
  r.read("pre_norm", c.pre_norm);
  std::string activation = "gelu";
  r.read("activation", activation);
  if (activation != "gelu") throw ConfigError("'" + r.qualified("activation") + "': only gelu is supported");
  std::string variant;
  if (r.read("variant", variant)) c.variant = parse_variant(variant);
  r.read("num_classes", c.num_classes);
  r.read("actor_feature_dim", c.actor_feature_dim);
  r.read("scene_feature_dim", c.scene_feature_dim);
  r.read("use_scene", c.use_scene);
  r.read("ln_eps", c.ln_eps);
  r.finish();
  c.validate();
  return c;
}

}  // namespace jarvis
