#pragma once

#include "jarvis/numerics/rng.hpp"
#include "jarvis/numerics/tensor.hpp"
#include "jarvis/synthdata/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace jarvis {

/// Action categories; classes are split evenly across them in this order.
enum class ActionCategory { Pose, PersonPerson, PersonObject };
std::string to_string(ActionCategory c);

struct ScenarioConfig {
  std::uint64_t seed = 7;
  int train_clips = 200;
  int eval_clips = 50;

  int num_actors_min = 1;
  int num_actors_max = 4;
  int num_classes = 12;
  int actor_feature_dim = 32;  // C
  int scene_feature_dim = 32;  // C'
  int grid_height = 8;
  int grid_width = 8;
  int grid_frames = 4;
  int num_proposals = 10;  // K

  // detector model
  double box_jitter = 0.02;          // sigma of corner noise, relative to box size
  double false_positive_rate = 0.3;  // chance per actor of an extra spurious detection
  double false_negative_rate = 0.02;
  double true_score_spread = 0.08;   // person score = 1 - spread * Exp(1)
  double false_score_max = 0.4;      // spurious detections score U[0, max]
  double hard_actor_probability = 0.1;  // real actors the detector is unsure about
  double hard_score_min = 0.15;
  double hard_score_max = 0.6;

  // signal
  double signature_magnitude = 3.0;
  double appearance_magnitude = 3.0;
  /// Actors draw distinct appearances from this many fixed directions; 0 draws
  /// a fresh random direction per actor.
  int appearance_palette = 8;
  double actor_feature_noise = 0.15;
  double scene_noise = 0.5;

  // actors and actions
  double pair_probability = 0.5;     // chance a new actor is placed beside an unpaired one
  double pair_distance = 0.3;        // proximity threshold between box centers
  double pair_action_probability = 0.9;
  double object_action_probability = 0.6;
  double momentary_probability = 0.2;
  double sustained_min = 2.5;        // half-extent of sustained actions, seconds
  double sustained_max = 8.0;
  double momentary_min = 0.4;
  double momentary_max = 0.8;
  double occlusion_probability = 0.0;
  double occlusion_min = 1.2;
  double occlusion_max = 1.6;
  double distractor_probability = 0.0;
  double distractor_min_offset = 4.5;
  double distractor_max_offset = 7.0;

  // timeline
  double timeline_half_span = 9.1;
  double slice_period = 0.35;

  void validate() const;
  int clip_count() const { return train_clips + eval_clips; }
  ActionCategory category_of(int class_id) const;
};

/// Sustained actions hidden around the keyframe plus distant distractor
/// actions: short clips miss evidence that neighbouring windows hold.
ScenarioConfig long_term_scenario(ScenarioConfig base = {});

nlohmann::json to_json(const ScenarioConfig& c);
ScenarioConfig scenario_config_from_json(const nlohmann::json& j, const std::string& path = "scenario");

/// Dataset-level constants shared by every clip: class signatures and the
/// map from appearance to actor RoI features.
struct SyntheticWorld {
  ScenarioConfig config;
  /// C' x N_cls, orthonormal columns.
  Tensor signatures;
  /// C x C'
  Tensor appearance_to_feature;
  /// C' x appearance_palette, unit columns; orthogonal to the signatures when they fit.
  Tensor palette;

  static std::shared_ptr<const SyntheticWorld> create(const ScenarioConfig& config);
};

struct ActionInstance {
  int class_id = 0;
  double start = 0.0;
  double end = 0.0;
  bool momentary = false;
  /// Not active at the keyframe; exists only to mislead long-range pooling.
  bool distractor = false;
  /// Partner actor for person-person classes, else -1.
  int partner = -1;

  bool active_at(double t) const { return t >= start && t <= end; }
};

struct SyntheticActor {
  BoundingBox box;
  /// Unit direction in scene feature space.
  Vector appearance;
  std::vector<ActionInstance> actions;
  bool occluded = false;
  double occlusion_start = 0.0;
  double occlusion_end = 0.0;

  bool hidden_at(double t) const { return occluded && t >= occlusion_start && t <= occlusion_end; }
};

/// Everything generated for one keyframe.
struct ClipSample {
  std::string id;
  std::uint64_t stream = 0;
  double keyframe_time = 0.0;
  std::shared_ptr<const SyntheticWorld> world;
  std::vector<SyntheticActor> actors;
  /// Raw detector output, before proposal sampling.
  std::vector<ActorProposal> detections;
  std::vector<GroundTruthActor> ground_truth;

  /// Scene tokens of one time slice, C' x (H*W), row-major cells.
  Tensor slice(int index) const;
  /// Slice index nearest to absolute time t, clamped to the timeline.
  int slice_index(double t) const;
  int max_slice() const;
  double timeline_start() const;
  double timeline_end() const;
  /// H x W x T grid sampled uniformly over [start, end].
  SceneContextGrid grid(double start, double end) const;
  /// Short clip around the keyframe shifted by `offset` seconds.
  SceneContextGrid short_clip(double half_span, double offset = 0.0) const;
};

/// Cell containing a normalized point.
std::pair<int, int> cell_of(double x, double y, int height, int width);

ClipSample generate_clip(const std::shared_ptr<const SyntheticWorld>& world, RngStream rng, std::string id,
                         double keyframe_time);
/// Builds the world from cfg.seed and generates one clip from `rng`.
ClipSample generate_clip(const ScenarioConfig& cfg, RngStream& rng);

struct SyntheticDataset {
  std::shared_ptr<const SyntheticWorld> world;
  std::vector<ClipSample> train;
  std::vector<ClipSample> eval;

  const ClipSample* find(const std::string& id) const;
};

/// Clip i is drawn from RngStream(seed, i + 1); the first train_clips are
/// the training split.
SyntheticDataset generate_dataset(const ScenarioConfig& cfg, int threads = 1);

/// The short clip fed to the model, shifted by `offset` seconds.
struct ClipView {
  const ClipSample* sample = nullptr;
  double offset = 0.0;

  SceneContextGrid grid(double half_span) const { return sample->short_clip(half_span, offset); }
};

/// Draws offset ~ U[-range, range]; proposals and ground truth are untouched.
ClipView temporal_augment(const ClipSample& sample, double range, double half_span, RngStream& rng);

struct ProposalSampling {
  enum class Mode { Threshold, TopK };
  Mode mode = Mode::TopK;
  double threshold = 0.0;
  int k = 10;

  static ProposalSampling top_k(int k) { return {Mode::TopK, 0.0, k}; }
  static ProposalSampling thresholded(double tau, int k) { return {Mode::Threshold, tau, k}; }
};

/// Exactly k proposals in descending person score: thresholded selections are
/// padded with dummies (score 0, zero feature, centered 0.01 x 0.01 box).
std::vector<ActorProposal> sample_proposals(std::span<const ActorProposal> detections, const ProposalSampling& mode,
                                            int feature_dim);

ActorProposal dummy_proposal(int feature_dim);

}  // namespace jarvis
