#pragma once

#include "jarvis/numerics/autodiff.hpp"
#include "jarvis/relation_model/config.hpp"
#include "jarvis/synthdata/types.hpp"

#include <span>
#include <vector>

namespace jarvis {

// Parameter indices into ModelParams::params.
struct NormParams {
  std::size_t gain = 0, bias = 0;
};
struct AttentionParams {
  std::size_t q_w = 0, q_b = 0, k_w = 0, k_b = 0, v_w = 0, v_b = 0, o_w = 0, o_b = 0;
};
struct MlpParams {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

/// Self-attention block used by the unified encoder and by the scene
/// encoder of the encoder-decoder variant.
struct EncoderBlock {
  NormParams norm_attn;
  AttentionParams attn;
  NormParams norm_mlp;
  MlpParams mlp;
};

/// Actor-side block of the decoder variants. The decoder-only variant has
/// no self-attention, so `has_self_attn` is false there.
struct DecoderBlock {
  bool has_self_attn = false;
  NormParams norm_self;
  AttentionParams self_attn;
  NormParams norm_cross_query;
  NormParams norm_cross_memory;
  AttentionParams cross_attn;
  NormParams norm_mlp;
  MlpParams mlp;
};

struct ModelParams {
  ModelConfig config;
  ParameterSet params;
  std::size_t actor_proj = 0;  // D x C
  std::size_t geom_proj = 0;   // D x 6
  std::size_t scene_proj = 0;  // D x C'
  std::vector<EncoderBlock> encoder;
  std::vector<DecoderBlock> decoder;
  MlpParams head;
};

/// Registers every parameter for `config` with variance-preserving uniform
/// weights, zero biases, unit layer-norm gains.
ModelParams init_model(const ModelConfig& config, RngStream& rng);

/// Zeroes the output projection of every attention sublayer and the second
/// MLP layer of every block, making each residual branch contribute zero.
void zero_residual_branches(ModelParams& model);

/// Records attention weights (keys x queries) per layer and head.
struct AttentionTrace {
  struct Entry {
    int layer = 0;
    int head = 0;
    /// "self", "cross" or "scene_self"
    std::string kind;
    Tensor weights;
  };
  std::vector<Entry> entries;
};

/// Binds a model to a tape for one forward pass. The const overload binds
/// every parameter as a constant, so the model can be shared across threads.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, ModelParams& model);
  ModelGraph(Tape& tape, const ModelParams& model);

  Var param(std::size_t idx) const { return leaves_[idx]; }
  Tape& tape() const { return *tape_; }
  const ModelParams& model() const { return *model_; }
  const ModelConfig& config() const { return model_->config; }

 private:
  Tape* tape_;
  const ModelParams* model_;
  std::vector<Var> leaves_;
};

/// j = [actor tokens, scene tokens] as D x (K + N).
struct TokenSequence {
  Var tokens;
  int actor_count = 0;
  int scene_count = 0;
};

struct ForwardOptions {
  RngStream* rng = nullptr;  // required when training with dropout > 0
  bool training = false;
  AttentionTrace* trace = nullptr;
};

/// a = E_a f_a + E_g g, one column per proposal.
Var embed_actors(ModelGraph& g, std::span<const ActorProposal> proposals);
/// D x N sinusoidal table; column n interleaves sin/cos over channel pairs.
Tensor sinusoidal_pe(int n, int d);
/// v = E_v f_v + E_pos with the positional index equal to the token index.
Var embed_scene(ModelGraph& g, const SceneContextGrid& grid);
/// L unified blocks over all K + N tokens.
TokenSequence encode(ModelGraph& g, const TokenSequence& seq, const ForwardOptions& opt);
/// Decoder-only or encoder-decoder relation modeling; returns D x K actor tokens.
Var encode_variant(ModelGraph& g, const Var& actor_tokens, const Var& scene_tokens, const ForwardOptions& opt);
/// Two-layer GELU head applied per token: N_cls x K logits.
Var classify(ModelGraph& g, const Var& actor_tokens);

/// Full relation-model pass: embed, relate (per variant), classify.
Var forward_logits(ModelGraph& g, std::span<const ActorProposal> proposals, const SceneContextGrid& grid,
                   const ForwardOptions& opt);

struct Prediction {
  BoundingBox box;
  double person_score = 0.0;
  Vector logits;
  Vector scores;
  std::size_t proposal_index = 0;
};
using PredictionSet = std::vector<Prediction>;

PredictionSet make_predictions(std::span<const ActorProposal> proposals, const Tensor& logits);
/// Same as above with precomputed scores (used by long-term aggregation).
PredictionSet make_predictions_from_scores(std::span<const ActorProposal> proposals, const Tensor& scores);

/// Keeps the k_prime entries with the highest person_score * max score,
/// ties to the lower proposal index, returned in their original order.
PredictionSet select_final(const PredictionSet& pred, int k_prime);

/// Inference convenience: builds a tape, runs the model without dropout.
Tensor infer_logits(const ModelParams& model, std::span<const ActorProposal> proposals, const SceneContextGrid& grid,
                    AttentionTrace* trace = nullptr);

}  // namespace jarvis
