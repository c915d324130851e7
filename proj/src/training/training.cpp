#include "jarvis/training/training.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/numerics/parallel.hpp"
#include "jarvis/synthdata/dataset_io.hpp"
#include "jarvis/util/json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace jarvis {

namespace {

// stream ids under the training seed
constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kShuffleStream = 0x12;
constexpr std::uint64_t kAugmentStream = 0x13;
constexpr std::uint64_t kDropoutStream = 0x14;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream(seed, kShuffleStream).split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<Tensor> values_of(const ParameterSet& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

CheckpointSection section_from_tensors(const std::string& name, const ParameterSet& params,
                                       const std::vector<Tensor>& values) {
  CheckpointSection s{name, {}};
  for (std::size_t i = 0; i < params.size(); ++i) s.tensors.push_back({params[i].name, values[i]});
  return s;
}

std::vector<Tensor> tensors_from_section(const CheckpointSection& s, const ParameterSet& params) {
  ParameterSet scratch;
  for (const auto& p : params) scratch.add(p.name, p.value.rows(), p.value.cols());
  load_params(s, scratch);
  return values_of(scratch);
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("optimizer.lr must be non-negative");
  if (!(backbone_lr >= 0.0)) throw ConfigError("optimizer.backbone_lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be non-negative");
  if (!(decay_factor > 0.0)) throw ConfigError("optimizer.decay_factor must be positive");
  if (decay_epoch < -1) throw ConfigError("optimizer.decay_epoch must be -1 or an epoch index");
  if (epochs < 1) throw ConfigError("optimizer.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("optimizer.batch_size must be at least 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("optimizer.clip_norm must be non-negative");
  if (!(augment_range >= 0.0)) throw ConfigError("optimizer.augment_range must be non-negative");
}

AdamWConfig OptimizerConfig::adam() const {
  AdamWConfig a;
  a.weight_decay = weight_decay;
  a.clip_norm = clip_norm;
  return a;
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"lr", c.lr},
          {"backbone_lr", c.backbone_lr},
          {"weight_decay", c.weight_decay},
          {"decay_epoch", c.decay_epoch},
          {"decay_factor", c.decay_factor},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"clip_norm", c.clip_norm},
          {"augment_range", c.augment_range}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, const std::string& path) {
  OptimizerConfig c;
  FieldReader r(j, path);
  r.read("lr", c.lr);
  r.read("backbone_lr", c.backbone_lr);
  r.read("weight_decay", c.weight_decay);
  r.read("decay_epoch", c.decay_epoch);
  r.read("decay_factor", c.decay_factor);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("clip_norm", c.clip_norm);
  r.read("augment_range", c.augment_range);
  r.finish();
  c.validate();
  return c;
}

ModelParams TrainState::best_model() const {
  ModelParams m = model;
  if (!best_params.empty()) {
    for (std::size_t i = 0; i < m.params.size(); ++i) m.params[i].value = best_params[i];
  }
  return m;
}

std::string TrainLogEntry::to_line() const {
  char buf[160];
  if (map) {
    std::snprintf(buf, sizeof buf, "step=%llu epoch=%d loss=%.6f lr=%.3g map=%.4f",
                  static_cast<unsigned long long>(step), epoch, loss, lr, *map);
  } else {
    std::snprintf(buf, sizeof buf, "step=%llu epoch=%d loss=%.6f lr=%.3g", static_cast<unsigned long long>(step),
                  epoch, loss, lr);
  }
  return buf;
}

TrainState init_train_state(const TrainOptions& opt) {
  opt.model.validate();
  opt.loss.validate();
  opt.optimizer.validate();
  opt.windowing.validate();
  if (opt.num_proposals < 1) throw ConfigError("num_proposals must be positive");
  TrainState s;
  RngStream rng(opt.seed, kInitStream);
  s.model = init_model(opt.model, rng);
  s.seed = opt.seed;
  s.config = {{"model", to_json(opt.model)},
              {"loss", to_json(opt.loss)},
              {"optimizer", to_json(opt.optimizer)},
              {"windowing", to_json(opt.windowing)},
              {"num_proposals", opt.num_proposals},
              {"seed", opt.seed}};
  return s;
}

Checkpoint train_state_checkpoint(const TrainState& s) {
  Checkpoint c;
  c.config = s.config;
  c.config["model"] = to_json(s.model.config);
  c.meta = {{"kind", "train_state"},
            {"epoch", s.epoch},
            {"batch", s.batch},
            {"step", s.step},
            {"seed", s.seed},
            {"best_map", s.best_map},
            {"best_epoch", s.best_epoch},
            {"adam_steps", s.adam_steps}};
  c.sections.push_back(section_from_params("model", s.model.params));
  if (!s.adam_m.empty()) {
    c.sections.push_back(section_from_tensors("optim.m", s.model.params, s.adam_m));
    c.sections.push_back(section_from_tensors("optim.v", s.model.params, s.adam_v));
  }
  if (!s.best_params.empty()) c.sections.push_back(section_from_tensors("best", s.model.params, s.best_params));
  if (s.aggregation) c.sections.push_back(aggregation_section(*s.aggregation));
  return c;
}

TrainState train_state_from_checkpoint(const Checkpoint& ckpt) {
  TrainState s;
  s.model = model_from_checkpoint(ckpt);
  s.config = ckpt.config;
  const auto& m = ckpt.meta;
  try {
    s.epoch = m.value("epoch", 0);
    s.batch = m.value("batch", 0);
    s.step = m.value("step", std::uint64_t{0});
    s.seed = m.value("seed", std::uint64_t{0});
    s.best_map = m.value("best_map", -1.0);
    s.best_epoch = m.value("best_epoch", -1);
    s.adam_steps = m.value("adam_steps", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint meta: ") + e.what());
  }
  const auto* om = ckpt.find("optim.m");
  const auto* ov = ckpt.find("optim.v");
  if ((om == nullptr) != (ov == nullptr)) throw ConfigError("checkpoint has only one optimizer moment section");
  if (om) {
    s.adam_m = tensors_from_section(*om, s.model.params);
    s.adam_v = tensors_from_section(*ov, s.model.params);
  }
  if (const auto* b = ckpt.find("best")) s.best_params = tensors_from_section(*b, s.model.params);
  if (const auto* a = ckpt.find("aggregation")) s.aggregation = aggregation_from_section(*a);
  return s;
}

void save_train_state(const std::filesystem::path& path, const TrainState& s) {
  write_checkpoint(path, train_state_checkpoint(s));
}

TrainState load_train_state(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint " + path.string() + " does not exist");
  return train_state_from_checkpoint(read_checkpoint(path));
}

double batch_step(TrainState& state, AdamW& optimizer, std::span<const BatchItem> batch, const TrainOptions& opt,
                  double lr, std::uint64_t dropout_key) {
  if (batch.empty()) throw ContractError("batch_step: empty batch");
  const std::size_t n = batch.size();
  const int K = opt.num_proposals;
  const ModelConfig& mc = state.model.config;
  std::vector<ModelParams> replicas(n, state.model);
  std::vector<double> losses(n, 0.0);
  parallel_for(n, opt.threads, [&](std::size_t i) {
    ModelParams& m = replicas[i];
    m.params.zero_grad();
    const ClipSample& clip = *batch[i].clip;
    const auto proposals = sample_proposals(clip.detections, ProposalSampling::top_k(K), mc.actor_feature_dim);
    const double centre = clip.keyframe_time + batch[i].offset;
    const SceneContextGrid grid = clip.grid(centre - opt.windowing.t_past, centre + opt.windowing.t_future);
    Tape tape;
    ModelGraph g(tape, m);
    RngStream dropout_rng = RngStream(state.seed, kDropoutStream).split(dropout_key * 4096 + i);
    ForwardOptions fo;
    fo.rng = &dropout_rng;
    fo.training = true;
    const Var logits = forward_logits(g, proposals, grid, fo);
    const GroundTruthSet targets = pad_targets(clip.ground_truth, static_cast<std::size_t>(K), mc.num_classes);
    const MatchResult matched = match(targets, make_predictions(proposals, logits.value()), opt.loss);
    const double norm = static_cast<double>(std::max<std::size_t>(targets.real_count, 1));
    const Var loss = scale(set_loss(targets, logits, matched.sigma, opt.loss), 1.0 / norm);
    losses[i] = loss.value()(0, 0);
    tape.backward(loss);
  });

  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
  auto diagnostic = [&](const std::string& what) {
    nlohmann::json clips = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      clips.push_back({{"clip", batch[i].clip->id},
                       {"stream", batch[i].clip->stream},
                       {"offset", batch[i].offset},
                       {"loss", std::isfinite(losses[i]) ? nlohmann::json(losses[i]) : nlohmann::json("non-finite")}});
    }
    return nlohmann::json{{"error", what},       {"step", state.step}, {"epoch", state.epoch},
                          {"seed", state.seed},  {"dropout_key", dropout_key}, {"lr", lr},
                          {"batch", clips}};
  };
  if (!std::isfinite(mean)) {
    throw NumericError("non-finite loss at step " + std::to_string(state.step), diagnostic("non-finite loss"));
  }

  state.model.params.zero_grad();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < state.model.params.size(); ++j) {
    Tensor& grad = state.model.params[j].grad;
    for (std::size_t i = 0; i < n; ++i) grad += replicas[i].params[j].grad;
    grad *= inv;
    if (!grad.allFinite()) {
      throw NumericError("non-finite gradient for " + state.model.params[j].name + " at step " +
                             std::to_string(state.step),
                         diagnostic("non-finite gradient"));
    }
  }
  optimizer.step(lr);
  return mean;
}

std::vector<TrainLogEntry> train_short_term(TrainState& state, const SyntheticDataset& data, const TrainOptions& opt) {
  opt.optimizer.validate();
  opt.windowing.validate();
  if (data.train.empty()) throw ConfigError("training split is empty");
  const OptimizerConfig& oc = opt.optimizer;
  AdamW optimizer(state.model.params, oc.adam());
  if (!state.adam_m.empty()) optimizer.restore(state.adam_m, state.adam_v, state.adam_steps);

  std::vector<TrainLogEntry> log;
  auto emit = [&](const TrainLogEntry& e) {
    log.push_back(e);
    if (opt.log_sink) opt.log_sink(e.to_line());
  };
  auto sync = [&] {
    state.adam_m = optimizer.first_moments();
    state.adam_v = optimizer.second_moments();
    state.adam_steps = optimizer.steps();
  };
  const double half_span = std::max(opt.windowing.t_past, opt.windowing.t_future);
  const std::size_t n = data.train.size();
  const std::size_t bs = static_cast<std::size_t>(oc.batch_size);
  const int batches = static_cast<int>((n + bs - 1) / bs);

  while (state.epoch < oc.epochs) {
    const auto order = epoch_order(n, state.seed, state.epoch);
    const double lr = oc.lr_at(state.epoch);
    for (; state.batch < batches; ++state.batch) {
      if (opt.max_steps >= 0 && state.step >= static_cast<std::uint64_t>(opt.max_steps)) {
        sync();
        return log;
      }
      RngStream aug = RngStream(state.seed, kAugmentStream).split(state.step);
      std::vector<BatchItem> items;
      for (std::size_t k = static_cast<std::size_t>(state.batch) * bs; k < std::min(n, (state.batch + 1) * bs); ++k) {
        const ClipSample& clip = data.train[order[k]];
        items.push_back({&clip, temporal_augment(clip, oc.augment_range, half_span, aug).offset});
      }
      const double loss = batch_step(state, optimizer, items, opt, lr, state.step);
      ++state.step;
      emit({state.step, state.epoch, loss, lr, std::nullopt});
    }
    const int finished_epoch = state.epoch;
    ++state.epoch;
    state.batch = 0;
    sync();
    bool improved = false;
    if (opt.eval_each_epoch && !data.eval.empty()) {
      InferenceOptions io;
      io.sampling = ProposalSampling::top_k(opt.num_proposals);
      io.windowing = WindowingConfig::single_window(opt.windowing.t_past, opt.windowing.t_future);
      const double map = evaluate_model(state.model, data.eval, io, opt.threads).mean_ap;
      if (map > state.best_map) {
        state.best_map = map;
        state.best_epoch = finished_epoch;
        state.best_params = values_of(state.model.params);
        improved = true;
      }
      emit({state.step, finished_epoch, log.empty() ? 0.0 : log.back().loss, lr, map});
    }
    if (opt.checkpoint_dir) {
      std::filesystem::create_directories(*opt.checkpoint_dir);
      save_train_state(*opt.checkpoint_dir / "last.ckpt", state);
      if (improved) {
        Checkpoint best = model_checkpoint(state.best_model());
        best.config = state.config;
        best.config["model"] = to_json(state.model.config);
        best.meta = {{"kind", "model"}, {"epoch", state.best_epoch}, {"map", state.best_map}};
        write_checkpoint(*opt.checkpoint_dir / "best.ckpt", best);
      }
    }
  }
  sync();
  return log;
}

std::vector<Detection> predict_clip(const ModelParams& model, const ClipSample& clip, const InferenceOptions& opt) {
  const auto proposals = sample_proposals(clip.detections, opt.sampling, model.config.actor_feature_dim);
  const WindowedScores ws = run_windowed(model, clip, proposals, opt.windowing);
  Tensor scores;
  if (opt.strategy.kind == Strategy::WeightedSum && opt.weights == nullptr) {
    if (ws.scores.size() != 1) throw ConfigError("weighted aggregation over several windows needs learned weights");
    scores = ws.scores[0];
  } else {
    const AggregationWeights none{Tensor()};
    scores = aggregate(ws.scores, opt.weights ? *opt.weights : none, opt.strategy);
  }
  std::vector<Detection> out;
  const long ts = timestamp_of(clip);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (proposals[i].dummy) continue;
    for (int k = 0; k < model.config.num_classes; ++k) {
      out.push_back(Detection{clip.id, ts, proposals[i].box, k,
                              proposals[i].person_score * scores(k, static_cast<Eigen::Index>(i))});
    }
  }
  return out;
}

std::vector<Detection> predict_clips(const ModelParams& model, std::span<const ClipSample> clips,
                                     const InferenceOptions& opt, int threads) {
  std::vector<std::vector<Detection>> per(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) { per[i] = predict_clip(model, clips[i], opt); });
  std::vector<Detection> out;
  for (auto& p : per) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<GroundTruthBox> ground_truth_boxes(std::span<const ClipSample> clips) {
  return flatten(annotations_of(clips));
}

EvalReport evaluate_model(const ModelParams& model, std::span<const ClipSample> clips, const InferenceOptions& opt,
                          int threads) {
  return evaluate(predict_clips(model, clips, opt, threads), ground_truth_boxes(clips),
                  ClassCatalog::standard(model.config.num_classes));
}

LongTermResult train_long_term(TrainState& state, const SyntheticDataset& data, const WindowingConfig& windowing,
                               const LossConfig& loss, const AggregationTrainConfig& cfg, int num_proposals,
                               int threads, const std::function<void(const std::string&)>& log_sink) {
  windowing.validate();
  cfg.validate();
  const std::uint64_t state_hash = hash_values(state.model.params);
  ModelParams model = state.best_model();
  model.params.set_frozen(true);
  const std::uint64_t before = hash_values(model.params);

  const auto examples = prepare_aggregation_examples(model, data.train, windowing, num_proposals, threads);
  LongTermResult r;
  r.weights = train_aggregation(model, examples, windowing, loss, cfg, &r.log);
  if (log_sink) {
    for (const auto& e : r.log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "phase=long epoch=%d loss=%.6f lr=%.3g", e.epoch, e.loss, cfg.lr);
      log_sink(buf);
    }
  }
  if (hash_values(model.params) != before || hash_values(state.model.params) != state_hash) {
    throw ContractError("model parameters changed during aggregation training");
  }

  InferenceOptions io;
  io.sampling = ProposalSampling::top_k(num_proposals);
  io.windowing = WindowingConfig::single_window(windowing.t_past, windowing.t_future);
  r.short_term_map = evaluate_model(model, data.eval, io, threads).mean_ap;
  io.windowing = windowing;
  io.weights = &r.weights;
  r.long_term_map = evaluate_model(model, data.eval, io, threads).mean_ap;
  state.aggregation = r.weights;
  state.config["windowing_long"] = to_json(windowing);
  state.config["aggregation"] = to_json(cfg);
  if (log_sink) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "phase=long short_term_map=%.4f long_term_map=%.4f", r.short_term_map,
                  r.long_term_map);
    log_sink(buf);
  }
  return r;
}

}  // namespace jarvis
