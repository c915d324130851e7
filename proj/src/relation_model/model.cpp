#include "jarvis/relation_model/model.hpp"

#include "jarvis/numerics/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jarvis {

namespace {

void init_uniform(Parameter& p, RngStream& rng) {
  const double fan_out = static_cast<double>(p.value.rows());
  const double fan_in = static_cast<double>(p.value.cols());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-bound, bound);
}

class Builder {
 public:
  Builder(ModelParams& m, RngStream& rng) : m_(m), rng_(rng) {}

  std::size_t weight(const std::string& name, int rows, int cols) {
    const std::size_t idx = m_.params.add(name, rows, cols);
    init_uniform(m_.params[idx], rng_);
    return idx;
  }
  std::size_t zeros(const std::string& name, int rows, int cols) { return m_.params.add(name, rows, cols); }

  NormParams norm(const std::string& prefix, int d) {
    NormParams n;
    n.gain = zeros(prefix + ".gain", d, 1);
    m_.params[n.gain].value.setOnes();
    n.bias = zeros(prefix + ".bias", d, 1);
    return n;
  }

  AttentionParams attention(const std::string& prefix, int d) {
    AttentionParams a;
    a.q_w = weight(prefix + ".q_w", d, d);
    a.q_b = zeros(prefix + ".q_b", d, 1);
    a.k_w = weight(prefix + ".k_w", d, d);
    a.k_b = zeros(prefix + ".k_b", d, 1);
    a.v_w = weight(prefix + ".v_w", d, d);
    a.v_b = zeros(prefix + ".v_b", d, 1);
    a.o_w = weight(prefix + ".o_w", d, d);
    a.o_b = zeros(prefix + ".o_b", d, 1);
    return a;
  }

  MlpParams mlp(const std::string& prefix, int in, int hidden, int out) {
    MlpParams p;
    p.w1 = weight(prefix + ".w1", hidden, in);
    p.b1 = zeros(prefix + ".b1", hidden, 1);
    p.w2 = weight(prefix + ".w2", out, hidden);
    p.b2 = zeros(prefix + ".b2", out, 1);
    return p;
  }

  EncoderBlock encoder_block(const std::string& prefix, const ModelConfig& c) {
    EncoderBlock b;
    b.norm_attn = norm(prefix + ".norm_attn", c.embed_dim);
    b.attn = attention(prefix + ".attn", c.embed_dim);
    b.norm_mlp = norm(prefix + ".norm_mlp", c.embed_dim);
    b.mlp = mlp(prefix + ".mlp", c.embed_dim, c.ffn_dim, c.embed_dim);
    return b;
  }

  DecoderBlock decoder_block(const std::string& prefix, const ModelConfig& c, bool self_attn) {
    DecoderBlock b;
    b.has_self_attn = self_attn;
    if (self_attn) {
      b.norm_self = norm(prefix + ".norm_self", c.embed_dim);
      b.self_attn = attention(prefix + ".self_attn", c.embed_dim);
    }
    b.norm_cross_query = norm(prefix + ".norm_cross_query", c.embed_dim);
    b.norm_cross_memory = norm(prefix + ".norm_cross_memory", c.embed_dim);
    b.cross_attn = attention(prefix + ".cross_attn", c.embed_dim);
    b.norm_mlp = norm(prefix + ".norm_mlp", c.embed_dim);
    b.mlp = mlp(prefix + ".mlp", c.embed_dim, c.ffn_dim, c.embed_dim);
    return b;
  }

 private:
  ModelParams& m_;
  RngStream& rng_;
};

Var linear(ModelGraph& g, std::size_t w, std::size_t b, const Var& x) {
  return add_bias(matmul(g.param(w), x), g.param(b));
}

Var norm(ModelGraph& g, const NormParams& n, const Var& x) {
  return layer_norm(x, g.param(n.gain), g.param(n.bias), g.config().ln_eps);
}

Var mlp(ModelGraph& g, const MlpParams& p, const Var& x) {
  return linear(g, p.w2, p.b2, gelu(linear(g, p.w1, p.b1, x)));
}

RngStream& dropout_rng(const ForwardOptions& opt) {
  if (opt.rng == nullptr) throw ContractError("training with dropout needs an RngStream");
  return *opt.rng;
}

Var maybe_dropout(const Var& x, double rate, const ForwardOptions& opt) {
  if (!opt.training || rate == 0.0) return x;
  return dropout(x, rate, dropout_rng(opt), true);
}

/// Multi-head scaled dot-product attention; queries and memory are D x T.
Var attention(ModelGraph& g, const AttentionParams& p, const Var& queries, const Var& memory,
              const ForwardOptions& opt, int layer, const char* kind) {
  const ModelConfig& c = g.config();
  const int dh = c.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var q = linear(g, p.q_w, p.q_b, queries);
  const Var k = linear(g, p.k_w, p.k_b, memory);
  const Var v = linear(g, p.v_w, p.v_b, memory);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(c.heads));
  for (int h = 0; h < c.heads; ++h) {
    const Var qh = slice_rows(q, h * dh, dh);
    const Var kh = slice_rows(k, h * dh, dh);
    const Var vh = slice_rows(v, h * dh, dh);
    Var weights = softmax(scale(matmul(transpose(kh), qh), inv_sqrt), 0);  // keys x queries
    if (opt.trace != nullptr) opt.trace->entries.push_back({layer, h, kind, weights.value()});
    weights = maybe_dropout(weights, c.attention_dropout, opt);
    heads.push_back(matmul(vh, weights));
  }
  return linear(g, p.o_w, p.o_b, concat_rows(heads));
}

Var self_block(ModelGraph& g, const EncoderBlock& b, const Var& x, const ForwardOptions& opt, int layer,
               const char* kind) {
  const ModelConfig& c = g.config();
  if (c.pre_norm) {
    const Var xn = norm(g, b.norm_attn, x);
    const Var z = x + maybe_dropout(attention(g, b.attn, xn, xn, opt, layer, kind), c.dropout, opt);
    return z + maybe_dropout(mlp(g, b.mlp, norm(g, b.norm_mlp, z)), c.dropout, opt);
  }
  const Var z = norm(g, b.norm_attn, x + maybe_dropout(attention(g, b.attn, x, x, opt, layer, kind), c.dropout, opt));
  return norm(g, b.norm_mlp, z + maybe_dropout(mlp(g, b.mlp, z), c.dropout, opt));
}

Var decoder_block(ModelGraph& g, const DecoderBlock& b, const Var& actors, const Var& memory,
                  const ForwardOptions& opt, int layer) {
  const ModelConfig& c = g.config();
  Var x = actors;
  if (c.pre_norm) {
    if (b.has_self_attn) {
      const Var xn = norm(g, b.norm_self, x);
      x = x + maybe_dropout(attention(g, b.self_attn, xn, xn, opt, layer, "self"), c.dropout, opt);
    }
    const Var qn = norm(g, b.norm_cross_query, x);
    const Var mn = norm(g, b.norm_cross_memory, memory);
    x = x + maybe_dropout(attention(g, b.cross_attn, qn, mn, opt, layer, "cross"), c.dropout, opt);
    return x + maybe_dropout(mlp(g, b.mlp, norm(g, b.norm_mlp, x)), c.dropout, opt);
  }
  if (b.has_self_attn) {
    x = norm(g, b.norm_self, x + maybe_dropout(attention(g, b.self_attn, x, x, opt, layer, "self"), c.dropout, opt));
  }
  const Var mn = norm(g, b.norm_cross_memory, memory);
  x = norm(g, b.norm_cross_query,
           x + maybe_dropout(attention(g, b.cross_attn, x, mn, opt, layer, "cross"), c.dropout, opt));
  return norm(g, b.norm_mlp, x + maybe_dropout(mlp(g, b.mlp, x), c.dropout, opt));
}

Tensor stack_columns(std::span<const ActorProposal> proposals, int dim, bool geometry) {
  Tensor out(dim, static_cast<Eigen::Index>(proposals.size()));
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    if (geometry) {
      out.col(col) = proposals[i].geometry;
    } else {
      if (proposals[i].feature.size() != dim) {
        throw DimensionError("embed_actors: proposal " + std::to_string(i) + " has feature length " +
                             std::to_string(proposals[i].feature.size()) + ", expected " + std::to_string(dim));
      }
      out.col(col) = proposals[i].feature;
    }
  }
  return out;
}

}  // namespace

ModelParams init_model(const ModelConfig& config, RngStream& rng) {
  config.validate();
  ModelParams m;
  m.config = config;
  Builder b(m, rng);
  const int d = config.embed_dim;
  m.actor_proj = b.weight("actor_proj", d, config.actor_feature_dim);
  m.geom_proj = b.weight("geom_proj", d, 6);
  if (config.use_scene) m.scene_proj = b.weight("scene_proj", d, config.scene_feature_dim);
  switch (config.variant) {
    case Variant::Unified:
      for (int l = 0; l < config.layers; ++l) m.encoder.push_back(b.encoder_block("encoder." + std::to_string(l), config));
      break;
    case Variant::DecoderOnly:
      for (int l = 0; l < config.layers; ++l)
        m.decoder.push_back(b.decoder_block("decoder." + std::to_string(l), config, false));
      break;
    case Variant::EncoderDecoder:
      for (int l = 0; l < config.layers; ++l) m.encoder.push_back(b.encoder_block("encoder." + std::to_string(l), config));
      for (int l = 0; l < config.layers; ++l)
        m.decoder.push_back(b.decoder_block("decoder." + std::to_string(l), config, true));
      break;
  }
  m.head = b.mlp("head", d, d, config.num_classes);
  return m;
}

void zero_residual_branches(ModelParams& model) {
  auto zero = [&](std::size_t idx) { model.params[idx].value.setZero(); };
  auto zero_attn = [&](const AttentionParams& a) {
    zero(a.o_w);
    zero(a.o_b);
  };
  auto zero_mlp = [&](const MlpParams& p) {
    zero(p.w2);
    zero(p.b2);
  };
  for (const auto& b : model.encoder) {
    zero_attn(b.attn);
    zero_mlp(b.mlp);
  }
  for (const auto& b : model.decoder) {
    if (b.has_self_attn) zero_attn(b.self_attn);
    zero_attn(b.cross_attn);
    zero_mlp(b.mlp);
  }
}

ModelGraph::ModelGraph(Tape& tape, ModelParams& model) : tape_(&tape), model_(&model) {
  leaves_.reserve(model.params.size());
  for (auto& p : model.params) leaves_.push_back(tape.parameter(p));
}

ModelGraph::ModelGraph(Tape& tape, const ModelParams& model) : tape_(&tape), model_(&model) {
  leaves_.reserve(model.params.size());
  for (const auto& p : model.params) leaves_.push_back(tape.constant_ref(p.value));
}

Var embed_actors(ModelGraph& g, std::span<const ActorProposal> proposals) {
  const ModelConfig& c = g.config();
  Tape& t = g.tape();
  const Var features = t.constant(stack_columns(proposals, c.actor_feature_dim, false));
  const Var geometry = t.constant(stack_columns(proposals, 6, true));
  return matmul(g.param(g.model().actor_proj), features) + matmul(g.param(g.model().geom_proj), geometry);
}

Tensor sinusoidal_pe(int n, int d) {
  if (d <= 0 || d % 2 != 0) throw ConfigError("sinusoidal_pe: D must be positive and even, got " + std::to_string(d));
  if (n < 0) throw ConfigError("sinusoidal_pe: N must be non-negative");
  Tensor pe(d, n);
  for (int i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(d));
    for (int pos = 0; pos < n; ++pos) {
      pe(2 * i, pos) = std::sin(pos * freq);
      pe(2 * i + 1, pos) = std::cos(pos * freq);
    }
  }
  return pe;
}

Var embed_scene(ModelGraph& g, const SceneContextGrid& grid) {
  const ModelConfig& c = g.config();
  if (grid.features.rows() != c.scene_feature_dim) {
    throw DimensionError("embed_scene: token length " + std::to_string(grid.features.rows()) + ", expected " +
                         std::to_string(c.scene_feature_dim));
  }
  if (grid.features.cols() != grid.token_count()) {
    throw DimensionError("embed_scene: grid holds " + std::to_string(grid.features.cols()) + " tokens, H*W*T = " +
                         std::to_string(grid.token_count()));
  }
  Tape& t = g.tape();
  const Var features = t.constant_ref(grid.features);
  const Var pe = t.constant(sinusoidal_pe(static_cast<int>(grid.features.cols()), c.embed_dim));
  return matmul(g.param(g.model().scene_proj), features) + pe;
}

TokenSequence encode(ModelGraph& g, const TokenSequence& seq, const ForwardOptions& opt) {
  const ModelConfig& c = g.config();
  if (c.variant != Variant::Unified) throw ContractError("encode: only the unified variant is routed here");
  if (seq.tokens.rows() != c.embed_dim || seq.tokens.cols() != seq.actor_count + seq.scene_count) {
    throw DimensionError("encode: token sequence is " + shape_string(seq.tokens.value()));
  }
  TokenSequence out = seq;
  for (std::size_t l = 0; l < g.model().encoder.size(); ++l) {
    out.tokens = self_block(g, g.model().encoder[l], out.tokens, opt, static_cast<int>(l), "self");
  }
  return out;
}

Var encode_variant(ModelGraph& g, const Var& actor_tokens, const Var& scene_tokens, const ForwardOptions& opt) {
  const ModelConfig& c = g.config();
  if (c.variant == Variant::Unified) throw ContractError("encode_variant: the unified variant goes through encode");
  Var memory = scene_tokens;
  if (c.variant == Variant::EncoderDecoder) {
    for (std::size_t l = 0; l < g.model().encoder.size(); ++l) {
      memory = self_block(g, g.model().encoder[l], memory, opt, static_cast<int>(l), "scene_self");
    }
  }
  Var actors = actor_tokens;
  for (std::size_t l = 0; l < g.model().decoder.size(); ++l) {
    actors = decoder_block(g, g.model().decoder[l], actors, memory, opt, static_cast<int>(l));
  }
  return actors;
}

Var classify(ModelGraph& g, const Var& actor_tokens) {
  if (actor_tokens.rows() != g.config().embed_dim) {
    throw DimensionError("classify: tokens are " + shape_string(actor_tokens.value()));
  }
  return mlp(g, g.model().head, actor_tokens);
}

Var forward_logits(ModelGraph& g, std::span<const ActorProposal> proposals, const SceneContextGrid& grid,
                   const ForwardOptions& opt) {
  const ModelConfig& c = g.config();
  const int k = static_cast<int>(proposals.size());
  if (k == 0) throw ContractError("forward_logits: no proposals");
  const Var actors = embed_actors(g, proposals);
  if (!c.use_scene) {
    const TokenSequence out = encode(g, TokenSequence{actors, k, 0}, opt);
    return classify(g, out.tokens);
  }
  const Var scene = embed_scene(g, grid);
  if (c.variant != Variant::Unified) return classify(g, encode_variant(g, actors, scene, opt));
  const std::vector<Var> parts{actors, scene};
  const TokenSequence out = encode(g, TokenSequence{concat_cols(parts), k, grid.token_count()}, opt);
  return classify(g, slice_cols(out.tokens, 0, k));
}

PredictionSet make_predictions_from_scores(std::span<const ActorProposal> proposals, const Tensor& scores) {
  if (scores.cols() != static_cast<Eigen::Index>(proposals.size())) {
    throw DimensionError("make_predictions: " + std::to_string(scores.cols()) + " score columns for " +
                         std::to_string(proposals.size()) + " proposals");
  }
  PredictionSet out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    Prediction p;
    p.box = proposals[i].box;
    p.person_score = proposals[i].person_score;
    p.scores = scores.col(static_cast<Eigen::Index>(i));
    p.proposal_index = i;
    out.push_back(std::move(p));
  }
  return out;
}

PredictionSet make_predictions(std::span<const ActorProposal> proposals, const Tensor& logits) {
  const Tensor scores = logits.unaryExpr([](double v) { return sigmoid_value(v); });
  PredictionSet out = make_predictions_from_scores(proposals, scores);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].logits = logits.col(static_cast<Eigen::Index>(i));
  return out;
}

PredictionSet select_final(const PredictionSet& pred, int k_prime) {
  if (k_prime <= 0) throw ConfigError("select_final: k_prime must be positive");
  if (static_cast<std::size_t>(k_prime) > pred.size()) {
    throw ContractError("select_final: k_prime " + std::to_string(k_prime) + " exceeds " +
                        std::to_string(pred.size()) + " proposals");
  }
  std::vector<double> confidence(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double best = pred[i].scores.size() > 0 ? pred[i].scores.maxCoeff() : 0.0;
    confidence[i] = pred[i].person_score * best;
  }
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
  order.resize(static_cast<std::size_t>(k_prime));
  std::sort(order.begin(), order.end());
  PredictionSet out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(pred[i]);
  return out;
}

Tensor infer_logits(const ModelParams& model, std::span<const ActorProposal> proposals, const SceneContextGrid& grid,
                    AttentionTrace* trace) {
  Tape tape;
  ModelGraph g(tape, model);
  ForwardOptions opt;
  opt.trace = trace;
  return forward_logits(g, proposals, grid, opt).value();
}

}  // namespace jarvis
