#pragma once

#include "jarvis/numerics/autodiff.hpp"
#include "jarvis/numerics/optimizer.hpp"
#include "jarvis/relation_model/checkpoint.hpp"
#include "jarvis/relation_model/model.hpp"
#include "jarvis/set_matching/matching.hpp"
#include "jarvis/synthdata/scenario.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

namespace jarvis {

/// Short clip [t - t_past, t + t_future] and long reach l_past / l_future,
/// all in seconds. l_past = l_future = 0 means a single window.
struct WindowingConfig {
  double t_past = 1.05;
  double t_future = 1.05;
  double l_past = 6.0;
  double l_future = 6.0;
  double stride = 1.0;

  void validate() const;
  int n_min() const;
  int n_max() const;
  int window_count() const { return n_max() - n_min() + 1; }
  /// Row of window offset n in AggregationWeights.
  int row_of(int n) const { return n - n_min(); }

  static WindowingConfig single_window(double t_past = 1.05, double t_future = 1.05);
  /// Total temporal support in seconds; anything up to the short clip gives
  /// a single window, otherwise the reach is split evenly.
  static WindowingConfig from_support(double support, double stride = 1.0, double t_past = 1.05,
                                      double t_future = 1.05);
};

nlohmann::json to_json(const WindowingConfig& c);
WindowingConfig windowing_config_from_json(const nlohmann::json& j, const std::string& path = "windowing");

struct Window {
  int n = 0;
  double start = 0.0;
  double end = 0.0;
};

/// One interval [t + stride*n - t_past, t + stride*n + t_future] per offset, ascending in n.
std::vector<Window> windows(const WindowingConfig& cfg, double keyframe_time);

/// A(n, k): weight of window row n for class k.
struct AggregationWeights {
  Tensor A;

  int window_count() const { return static_cast<int>(A.rows()); }
  int num_classes() const { return static_cast<int>(A.cols()); }

  /// Row `row` all ones, every other row zero.
  static AggregationWeights one_hot(int windows, int num_classes, int row);
  static AggregationWeights uniform(int windows, int num_classes);
};

enum class Strategy { WeightedSum, Max, Avg, TopK };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct AggregationStrategy {
  Strategy kind = Strategy::WeightedSum;
  /// Used by TopK only.
  int k = 1;
};

/// Combines per-window scores (each N_cls x K) into one N_cls x K tensor.
Tensor aggregate(std::span<const Tensor> scores, const AggregationWeights& weights, const AggregationStrategy& strategy);

/// Differentiable weighted sum: out(k, j) = sum_n A(n, k) * scores[n](k, j).
/// `scores` must outlive the tape.
Var weighted_window_sum(const Var& A, std::span<const Tensor> scores);

/// Action probabilities of every window for one keyframe's proposals.
struct WindowedScores {
  std::vector<int> offsets;
  /// sigmoid of the logits, N_cls x K per window
  std::vector<Tensor> scores;
};

/// Runs the model once per window with the keyframe's proposals fixed.
/// Windows reaching past the clip's timeline are shifted inside it and
/// logged once per call.
WindowedScores run_windowed(const ModelParams& model, const ClipSample& clip, std::span<const ActorProposal> proposals,
                            const WindowingConfig& cfg);

struct AggregationTrainConfig {
  double lr = 1e-2;
  int epochs = 20;
  int batch_size = 4;
  AdamWConfig adam{0.9, 0.999, 1e-8, 0.0, 1.0};
  std::uint64_t seed = 7;

  void validate() const;
};

nlohmann::json to_json(const AggregationTrainConfig& c);
AggregationTrainConfig aggregation_train_config_from_json(const nlohmann::json& j,
                                                          const std::string& path = "aggregation");

/// Cached per-clip inputs of phase-two training: frozen window scores,
/// proposals, and padded targets.
struct AggregationExample {
  std::vector<ActorProposal> proposals;
  WindowedScores windows;
  GroundTruthSet targets;
};

std::vector<AggregationExample> prepare_aggregation_examples(const ModelParams& model, std::span<const ClipSample> clips,
                                                             const WindowingConfig& windowing, int num_proposals,
                                                             int threads);

/// Set loss of the aggregated scores of one example; matching uses the
/// frozen detector scores and boxes as in short-term training.
Var aggregation_loss(const Var& A, const AggregationExample& example, const LossConfig& loss);

struct AggregationTrainLog {
  int epoch = 0;
  double loss = 0.0;
};

/// Learns A with the model held fixed. Every model parameter must be frozen
/// (ContractError otherwise) and stays bit-identical. A starts one-hot at
/// n = 0.
AggregationWeights train_aggregation(const ModelParams& model, std::span<const AggregationExample> examples,
                                     const WindowingConfig& windowing, const LossConfig& loss,
                                     const AggregationTrainConfig& cfg, std::vector<AggregationTrainLog>* log = nullptr);

/// Checkpoint section "aggregation" holding tensor "A".
CheckpointSection aggregation_section(const AggregationWeights& weights);
AggregationWeights aggregation_from_section(const CheckpointSection& section);

}  // namespace jarvis
