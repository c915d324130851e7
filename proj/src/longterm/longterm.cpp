#include "jarvis/longterm/longterm.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/numerics/parallel.hpp"
#include "jarvis/util/json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace jarvis {

namespace {

int floor_ratio(double a, double b) { return static_cast<int>(std::floor(a / b + 1e-9)); }

}  // namespace

void WindowingConfig::validate() const {
  if (!(t_past > 0.0 && t_future > 0.0)) throw ConfigError("short clip spans must be positive");
  if (!(stride > 0.0)) throw ConfigError("window stride must be positive");
  if (l_past < 0.0 || l_future < 0.0) throw ConfigError("long spans must be non-negative");
  const bool single = l_past == 0.0 && l_future == 0.0;
  if (!single && (l_past < t_past || l_future < t_future)) {
    throw ConfigError("long spans must cover the short clip (l_past >= t_past, l_future >= t_future) or both be 0");
  }
}

int WindowingConfig::n_min() const { return -floor_ratio(l_past, stride); }
int WindowingConfig::n_max() const { return floor_ratio(l_future, stride); }

WindowingConfig WindowingConfig::single_window(double t_past, double t_future) {
  return WindowingConfig{t_past, t_future, 0.0, 0.0, 1.0};
}

WindowingConfig WindowingConfig::from_support(double support, double stride, double t_past, double t_future) {
  if (!(support > 0.0)) throw ConfigError("temporal support must be positive");
  if (support <= t_past + t_future + 1e-9) {
    WindowingConfig c = single_window(t_past, t_future);
    c.stride = stride;
    return c;
  }
  WindowingConfig c{t_past, t_future, 0.5 * support, 0.5 * support, stride};
  c.l_past = std::max(c.l_past, t_past);
  c.l_future = std::max(c.l_future, t_future);
  c.validate();
  return c;
}

nlohmann::json to_json(const WindowingConfig& c) {
  return {{"t_past", c.t_past}, {"t_future", c.t_future}, {"l_past", c.l_past}, {"l_future", c.l_future},
          {"stride", c.stride}};
}

WindowingConfig windowing_config_from_json(const nlohmann::json& j, const std::string& path) {
  WindowingConfig c;
  FieldReader r(j, path);
  r.read("t_past", c.t_past);
  r.read("t_future", c.t_future);
  r.read("l_past", c.l_past);
  r.read("l_future", c.l_future);
  r.read("stride", c.stride);
  r.finish();
  c.validate();
  return c;
}

std::vector<Window> windows(const WindowingConfig& cfg, double t) {
  cfg.validate();
  std::vector<Window> out;
  for (int n = cfg.n_min(); n <= cfg.n_max(); ++n) {
    const double centre = t + cfg.stride * n;
    out.push_back(Window{n, centre - cfg.t_past, centre + cfg.t_future});
  }
  return out;
}

AggregationWeights AggregationWeights::one_hot(int windows, int num_classes, int row) {
  if (windows <= 0 || num_classes <= 0 || row < 0 || row >= windows) {
    throw ConfigError("one_hot: row " + std::to_string(row) + " outside " + std::to_string(windows) + " windows");
  }
  AggregationWeights w{Tensor::Zero(windows, num_classes)};
  w.A.row(row).setOnes();
  return w;
}

AggregationWeights AggregationWeights::uniform(int windows, int num_classes) {
  if (windows <= 0 || num_classes <= 0) throw ConfigError("uniform: empty aggregation shape");
  return AggregationWeights{Tensor::Constant(windows, num_classes, 1.0 / windows)};
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::WeightedSum:
      return "weighted";
    case Strategy::Max:
      return "max";
    case Strategy::Avg:
      return "avg";
    case Strategy::TopK:
      return "topk";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  for (Strategy v : {Strategy::WeightedSum, Strategy::Max, Strategy::Avg, Strategy::TopK})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown aggregation strategy '" + s + "' (expected weighted, max, avg or topk)");
}

Tensor aggregate(std::span<const Tensor> scores, const AggregationWeights& weights, const AggregationStrategy& strategy) {
  if (scores.empty()) throw ContractError("aggregate: no windows");
  const Eigen::Index rows = scores[0].rows(), cols = scores[0].cols();
  for (const Tensor& s : scores) {
    if (s.rows() != rows || s.cols() != cols) {
      throw DimensionError("aggregate: window scores " + shape_string(s) + " vs " + shape_string(scores[0]));
    }
  }
  const int nw = static_cast<int>(scores.size());
  Tensor out = Tensor::Zero(rows, cols);
  switch (strategy.kind) {
    case Strategy::WeightedSum: {
      if (weights.window_count() != nw || weights.num_classes() != rows) {
        throw DimensionError("aggregate: weights " + shape_string(weights.A) + " for " + std::to_string(nw) +
                             " windows of " + std::to_string(rows) + " classes");
      }
      for (int n = 0; n < nw; ++n) out += weights.A.row(n).transpose().asDiagonal() * scores[n];
      break;
    }
    case Strategy::Avg: {
      // same summation order as WeightedSum with uniform weights
      const double w = 1.0 / nw;
      for (int n = 0; n < nw; ++n) out += Vector::Constant(rows, w).asDiagonal() * scores[n];
      break;
    }
    case Strategy::Max: {
      out = scores[0];
      for (int n = 1; n < nw; ++n) out = out.cwiseMax(scores[n]);
      break;
    }
    case Strategy::TopK: {
      if (strategy.k <= 0 || strategy.k > nw) {
        throw ConfigError("aggregate: top-k needs 1 <= k <= " + std::to_string(nw) + ", got " +
                          std::to_string(strategy.k));
      }
      std::vector<double> v(nw);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
          for (int n = 0; n < nw; ++n) v[n] = scores[n](r, c);
          std::partial_sort(v.begin(), v.begin() + strategy.k, v.end(), std::greater<>());
          double s = 0.0;
          for (int i = 0; i < strategy.k; ++i) s += v[i];
          out(r, c) = s / strategy.k;
        }
      }
      break;
    }
  }
  return out;
}

Var weighted_window_sum(const Var& A, std::span<const Tensor> scores) {
  if (scores.empty()) throw ContractError("weighted_window_sum: no windows");
  const Tensor& a = A.value();
  if (a.rows() != static_cast<Eigen::Index>(scores.size()) || a.cols() != scores[0].rows()) {
    throw DimensionError("weighted_window_sum: weights " + shape_string(a) + " for " + std::to_string(scores.size()) +
                         " windows of " + shape_string(scores[0]));
  }
  Tensor out = Tensor::Zero(scores[0].rows(), scores[0].cols());
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (scores[n].rows() != out.rows() || scores[n].cols() != out.cols()) {
      throw DimensionError("weighted_window_sum: window " + std::to_string(n) + " has shape " + shape_string(scores[n]));
    }
    out += a.row(static_cast<Eigen::Index>(n)).transpose().asDiagonal() * scores[n];
  }
  const std::size_t id = A.id();
  return A.tape()->record(std::move(out), A.requires_grad(), [id, scores](Tape& t, const Tensor& g) {
    Tensor ga(static_cast<Eigen::Index>(scores.size()), g.rows());
    for (std::size_t n = 0; n < scores.size(); ++n)
      ga.row(static_cast<Eigen::Index>(n)) = g.cwiseProduct(scores[n]).rowwise().sum().transpose();
    t.accumulate(id, ga);
  });
}

WindowedScores run_windowed(const ModelParams& model, const ClipSample& clip, std::span<const ActorProposal> proposals,
                            const WindowingConfig& cfg) {
  WindowedScores out;
  bool clamped = false;
  const double lo = clip.timeline_start(), hi = clip.timeline_end();
  for (const Window& w : windows(cfg, clip.keyframe_time)) {
    double start = w.start, end = w.end;
    if (start < lo - 1e-9) {
      end += lo - start;
      start = lo;
      clamped = true;
    }
    if (end > hi + 1e-9) {
      start -= end - hi;
      end = hi;
      clamped = true;
    }
    const Tensor logits = infer_logits(model, proposals, clip.grid(start, end));
    out.offsets.push_back(w.n);
    out.scores.push_back(logits.unaryExpr([](double v) { return sigmoid_value(v); }));
  }
  if (clamped) std::clog << "note: " << clip.id << ": windows clamped to the available timeline\n";
  return out;
}

void AggregationTrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("aggregation.lr must be non-negative");
  if (epochs < 1) throw ConfigError("aggregation.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("aggregation.batch_size must be at least 1");
  adam.validate();
}

nlohmann::json to_json(const AggregationTrainConfig& c) {
  return {{"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"weight_decay", c.adam.weight_decay},
          {"clip_norm", c.adam.clip_norm},
          {"seed", c.seed}};
}

AggregationTrainConfig aggregation_train_config_from_json(const nlohmann::json& j, const std::string& path) {
  AggregationTrainConfig c;
  FieldReader r(j, path);
  r.read("lr", c.lr);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("weight_decay", c.adam.weight_decay);
  r.read("clip_norm", c.adam.clip_norm);
  r.read("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

std::vector<AggregationExample> prepare_aggregation_examples(const ModelParams& model, std::span<const ClipSample> clips,
                                                             const WindowingConfig& windowing, int num_proposals,
                                                             int threads) {
  std::vector<AggregationExample> out(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    const ClipSample& clip = clips[i];
    AggregationExample& ex = out[i];
    ex.proposals =
        sample_proposals(clip.detections, ProposalSampling::top_k(num_proposals), model.config.actor_feature_dim);
    ex.windows = run_windowed(model, clip, ex.proposals, windowing);
    ex.targets = pad_targets(clip.ground_truth, static_cast<std::size_t>(num_proposals), model.config.num_classes);
  });
  return out;
}

Var aggregation_loss(const Var& A, const AggregationExample& example, const LossConfig& loss) {
  const Var agg = weighted_window_sum(A, example.windows.scores);
  const PredictionSet preds = make_predictions_from_scores(example.proposals, agg.value());
  const MatchResult m = match(example.targets, preds, loss);
  return set_loss_from_scores(example.targets, agg, m.sigma, loss);
}

AggregationWeights train_aggregation(const ModelParams& model, std::span<const AggregationExample> examples,
                                     const WindowingConfig& windowing, const LossConfig& loss,
                                     const AggregationTrainConfig& cfg, std::vector<AggregationTrainLog>* log) {
  cfg.validate();
  windowing.validate();
  for (const Parameter& p : model.params) {
    if (!p.frozen) throw ContractError("train_aggregation: model parameter " + p.name + " is not frozen");
  }
  if (examples.empty()) throw ContractError("train_aggregation: no examples");
  const int nw = windowing.window_count();
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.windows.scores.size()) != nw) {
      throw DimensionError("train_aggregation: example has " + std::to_string(ex.windows.scores.size()) +
                           " windows, config has " + std::to_string(nw));
    }
  }

  ParameterSet weights;
  const std::size_t a_idx = weights.add("A", nw, model.config.num_classes);
  weights[a_idx].value = AggregationWeights::one_hot(nw, model.config.num_classes, windowing.row_of(0)).A;
  AdamW opt(weights, cfg.adam);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle(cfg.seed, 0x4147470000ull + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      weights.zero_grad();
      Tape tape;
      const Var A = tape.parameter(weights[a_idx]);
      std::vector<Var> terms;
      for (std::size_t i = b; i < e; ++i) terms.push_back(aggregation_loss(A, examples[order[i]], loss));
      Var total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
      total = scale(total, 1.0 / static_cast<double>(terms.size()));
      const double value = total.value()(0, 0);
      if (!std::isfinite(value)) throw Error("train_aggregation: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += value * static_cast<double>(terms.size());
      tape.backward(total);
      opt.step(cfg.lr);
    }
    if (log) log->push_back({epoch, epoch_loss / static_cast<double>(order.size())});
  }
  return AggregationWeights{weights[a_idx].value};
}

CheckpointSection aggregation_section(const AggregationWeights& weights) {
  return CheckpointSection{"aggregation", {NamedTensor{"A", weights.A}}};
}

AggregationWeights aggregation_from_section(const CheckpointSection& section) {
  for (const auto& t : section.tensors)
    if (t.name == "A") return AggregationWeights{t.value};
  throw ConfigError("checkpoint section '" + section.name + "' has no tensor 'A'");
}

}  // namespace jarvis
