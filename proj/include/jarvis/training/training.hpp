#pragma once

#include "jarvis/evaluation/evaluate.hpp"
#include "jarvis/longterm/longterm.hpp"
#include "jarvis/numerics/optimizer.hpp"
#include "jarvis/relation_model/checkpoint.hpp"
#include "jarvis/relation_model/model.hpp"
#include "jarvis/set_matching/matching.hpp"
#include "jarvis/synthdata/scenario.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jarvis {

struct OptimizerConfig {
  double lr = 1e-3;
  /// Slot for a pretrained feature extractor; nothing trains at this rate here.
  double backbone_lr = 1e-5;
  double weight_decay = 1e-4;
  /// From this epoch on the rate is multiplied by decay_factor; -1 never.
  int decay_epoch = 24;
  double decay_factor = 0.1;
  int epochs = 30;
  int batch_size = 4;
  double clip_norm = 1.0;
  /// Temporal augmentation range in seconds.
  double augment_range = 1.5;

  void validate() const;
  double lr_at(int epoch) const { return decay_epoch >= 0 && epoch >= decay_epoch ? lr * decay_factor : lr; }
  AdamWConfig adam() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, const std::string& path = "optimizer");

/// Everything the short-term loop needs besides the data.
struct TrainOptions {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  /// Only the short clip spans are used in short-term training.
  WindowingConfig windowing = WindowingConfig::single_window();
  int num_proposals = 10;
  std::uint64_t seed = 7;
  int threads = 1;
  bool eval_each_epoch = true;
  /// When set, last.ckpt and best.ckpt are written there after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Stop after this many optimizer steps in total (for interruption); -1 runs to the end.
  std::int64_t max_steps = -1;
  std::function<void(const std::string&)> log_sink;
};

struct TrainState {
  ModelParams model;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::uint64_t adam_steps = 0;
  /// Next epoch and batch within it.
  int epoch = 0;
  int batch = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  double best_map = -1.0;
  int best_epoch = -1;
  /// Parameter values of the best epoch, in registry order.
  std::vector<Tensor> best_params;
  std::optional<AggregationWeights> aggregation;
  /// Echo of the options the state was trained with.
  nlohmann::json config = nlohmann::json::object();

  bool finished(const OptimizerConfig& c) const { return epoch >= c.epochs; }
  /// Copy of the model with the best-epoch values, or the current values if none.
  ModelParams best_model() const;
};

struct TrainLogEntry {
  std::uint64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> map;

  std::string to_line() const;
};

/// Raised when the loss or a gradient stops being finite.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, nlohmann::json diagnostic) : Error(what), diagnostic_(std::move(diagnostic)) {}
  const nlohmann::json& diagnostic() const { return diagnostic_; }

 private:
  nlohmann::json diagnostic_;
};

TrainState init_train_state(const TrainOptions& opt);

/// Checkpoint sections: "model", "optim.m", "optim.v", optionally "best" and
/// "aggregation"; counters under meta, the option echo under config.
Checkpoint train_state_checkpoint(const TrainState& s);
TrainState train_state_from_checkpoint(const Checkpoint& ckpt);
void save_train_state(const std::filesystem::path& path, const TrainState& s);
/// ConfigError if the file does not exist.
TrainState load_train_state(const std::filesystem::path& path);

/// One training example: a clip with its temporal shift.
struct BatchItem {
  const ClipSample* clip = nullptr;
  double offset = 0.0;
};

/// Forward, match, loss and backward over a batch, then one optimizer step
/// at `lr`. Per-example losses are normalized by the number of real targets
/// and averaged. Dropout draws come from `dropout_key`. Returns the loss.
double batch_step(TrainState& state, AdamW& optimizer, std::span<const BatchItem> batch, const TrainOptions& opt,
                  double lr, std::uint64_t dropout_key);

/// Phase one: temporal augmentation, set loss, AdamW, per-epoch evaluation
/// on the eval split with the best epoch retained. Resumes from state.epoch
/// and state.batch; returns the log of this call.
std::vector<TrainLogEntry> train_short_term(TrainState& state, const SyntheticDataset& data, const TrainOptions& opt);

struct InferenceOptions {
  ProposalSampling sampling = ProposalSampling::top_k(10);
  WindowingConfig windowing = WindowingConfig::single_window();
  AggregationStrategy strategy;
  /// Required for the weighted strategy with more than one window.
  const AggregationWeights* weights = nullptr;
};

/// Frame detections of one keyframe: every real proposal and class, scored
/// person_score * action score.
std::vector<Detection> predict_clip(const ModelParams& model, const ClipSample& clip, const InferenceOptions& opt);
std::vector<Detection> predict_clips(const ModelParams& model, std::span<const ClipSample> clips,
                                     const InferenceOptions& opt, int threads);
std::vector<GroundTruthBox> ground_truth_boxes(std::span<const ClipSample> clips);
EvalReport evaluate_model(const ModelParams& model, std::span<const ClipSample> clips, const InferenceOptions& opt,
                          int threads);

struct LongTermResult {
  AggregationWeights weights;
  double short_term_map = 0.0;
  double long_term_map = 0.0;
  std::vector<AggregationTrainLog> log;
};

/// Phase two: freezes the model, learns A on the train split, and compares
/// eval mAP of the keyframe window alone against the weighted aggregate.
/// Throws ContractError if the model parameters change.
LongTermResult train_long_term(TrainState& state, const SyntheticDataset& data, const WindowingConfig& windowing,
                               const LossConfig& loss, const AggregationTrainConfig& cfg, int num_proposals,
                               int threads, const std::function<void(const std::string&)>& log_sink = {});

}  // namespace jarvis
