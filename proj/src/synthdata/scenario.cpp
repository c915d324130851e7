#include "jarvis/synthdata/scenario.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/numerics/parallel.hpp"
#include "jarvis/util/json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace jarvis {

namespace {

// Child-stream keys inside one clip's stream.
constexpr std::uint64_t kLayoutKey = 1;
constexpr std::uint64_t kDetectorKey = 2;
constexpr std::uint64_t kSliceKeyBase = 1ULL << 32;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("scenario: " + what);
}

bool is_rate(double r) { return r >= 0.0 && r <= 1.0; }

Vector random_unit(int n, RngStream& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v / v.norm();
}

double exponential(RngStream& rng) { return -std::log1p(-rng.uniform()); }

}  // namespace

std::string to_string(ActionCategory c) {
  switch (c) {
    case ActionCategory::Pose:
      return "pose";
    case ActionCategory::PersonPerson:
      return "person_person";
    case ActionCategory::PersonObject:
      return "person_object";
  }
  return "pose";
}

void ScenarioConfig::validate() const {
  require(train_clips >= 0 && eval_clips >= 0 && clip_count() > 0, "clip counts must be non-negative, total > 0");
  require(num_actors_min >= 1 && num_actors_max >= num_actors_min, "need 1 <= num_actors_min <= num_actors_max");
  require(num_classes >= 3 && num_classes % 3 == 0, "num_classes must be a positive multiple of 3");
  require(actor_feature_dim > 0 && scene_feature_dim > 0, "feature dims must be positive");
  require(num_classes <= scene_feature_dim, "num_classes cannot exceed scene_feature_dim (orthonormal signatures)");
  require(grid_height > 0 && grid_width > 0 && grid_frames > 0, "grid dims must be positive");
  require(num_proposals > 0, "num_proposals must be positive");
  for (double r : {false_positive_rate, false_negative_rate, pair_probability, pair_action_probability,
                   object_action_probability, momentary_probability, occlusion_probability, distractor_probability,
                   hard_actor_probability}) {
    require(is_rate(r), "rates and probabilities must lie in [0, 1]");
  }
  require(box_jitter >= 0.0 && true_score_spread >= 0.0, "detector noise must be non-negative");
  require(false_score_max >= 0.0 && false_score_max <= 1.0, "false_score_max must lie in [0, 1]");
  require(hard_score_min >= 0.0 && hard_score_min <= hard_score_max && hard_score_max <= 1.0,
          "need 0 <= hard_score_min <= hard_score_max <= 1");
  require(signature_magnitude >= 0.0 && appearance_magnitude >= 0.0, "magnitudes must be non-negative");
  require(appearance_palette == 0 || appearance_palette >= num_actors_max,
          "appearance_palette must be 0 or at least num_actors_max");
  require(actor_feature_noise >= 0.0 && scene_noise >= 0.0, "noise levels must be non-negative");
  require(pair_distance > 0.0, "pair_distance must be positive");
  require(sustained_min > 0.0 && sustained_min <= sustained_max, "need 0 < sustained_min <= sustained_max");
  require(momentary_min > 0.0 && momentary_min <= momentary_max, "need 0 < momentary_min <= momentary_max");
  require(occlusion_min > 0.0 && occlusion_min <= occlusion_max, "need 0 < occlusion_min <= occlusion_max");
  require(distractor_min_offset > 0.0 && distractor_min_offset <= distractor_max_offset,
          "need 0 < distractor_min_offset <= distractor_max_offset");
  require(slice_period > 0.0 && timeline_half_span >= 0.0, "timeline must have a positive slice period");
}

ActionCategory ScenarioConfig::category_of(int class_id) const {
  if (class_id < 0 || class_id >= num_classes) throw ValidationError("class id " + std::to_string(class_id) + " out of range");
  return static_cast<ActionCategory>(class_id / (num_classes / 3));
}

ScenarioConfig long_term_scenario(ScenarioConfig base) {
  base.momentary_probability = 0.0;
  base.sustained_min = 2.0;
  base.sustained_max = 3.5;
  base.occlusion_probability = 0.4;
  base.distractor_probability = 0.5;
  return base;
}

nlohmann::json to_json(const ScenarioConfig& c) {
  return nlohmann::json{{"seed", c.seed},
                        {"train_clips", c.train_clips},
                        {"eval_clips", c.eval_clips},
                        {"num_actors_min", c.num_actors_min},
                        {"num_actors_max", c.num_actors_max},
                        {"num_classes", c.num_classes},
                        {"actor_feature_dim", c.actor_feature_dim},
                        {"scene_feature_dim", c.scene_feature_dim},
                        {"grid_height", c.grid_height},
                        {"grid_width", c.grid_width},
                        {"grid_frames", c.grid_frames},
                        {"num_proposals", c.num_proposals},
                        {"box_jitter", c.box_jitter},
                        {"false_positive_rate", c.false_positive_rate},
                        {"false_negative_rate", c.false_negative_rate},
                        {"true_score_spread", c.true_score_spread},
                        {"false_score_max", c.false_score_max},
                        {"hard_actor_probability", c.hard_actor_probability},
                        {"hard_score_min", c.hard_score_min},
                        {"hard_score_max", c.hard_score_max},
                        {"signature_magnitude", c.signature_magnitude},
                        {"appearance_magnitude", c.appearance_magnitude},
                        {"appearance_palette", c.appearance_palette},
                        {"actor_feature_noise", c.actor_feature_noise},
                        {"scene_noise", c.scene_noise},
                        {"pair_probability", c.pair_probability},
                        {"pair_distance", c.pair_distance},
                        {"pair_action_probability", c.pair_action_probability},
                        {"object_action_probability", c.object_action_probability},
                        {"momentary_probability", c.momentary_probability},
                        {"sustained_min", c.sustained_min},
                        {"sustained_max", c.sustained_max},
                        {"momentary_min", c.momentary_min},
                        {"momentary_max", c.momentary_max},
                        {"occlusion_probability", c.occlusion_probability},
                        {"occlusion_min", c.occlusion_min},
                        {"occlusion_max", c.occlusion_max},
                        {"distractor_probability", c.distractor_probability},
                        {"distractor_min_offset", c.distractor_min_offset},
                        {"distractor_max_offset", c.distractor_max_offset},
                        {"timeline_half_span", c.timeline_half_span},
                        {"slice_period", c.slice_period}};
}

ScenarioConfig scenario_config_from_json(const nlohmann::json& j, const std::string& path) {
  ScenarioConfig c;
  FieldReader r(j, path);
  r.read("seed", c.seed);
  r.read("train_clips", c.train_clips);
  r.read("eval_clips", c.eval_clips);
  r.read("num_actors_min", c.num_actors_min);
  r.read("num_actors_max", c.num_actors_max);
  r.read("num_classes", c.num_classes);
  r.read("actor_feature_dim", c.actor_feature_dim);
  r.read("scene_feature_dim", c.scene_feature_dim);
  r.read("grid_height", c.grid_height);
  r.read("grid_width", c.grid_width);
  r.read("grid_frames", c.grid_frames);
  r.read("num_proposals", c.num_proposals);
  r.read("box_jitter", c.box_jitter);
  r.read("false_positive_rate", c.false_positive_rate);
  r.read("false_negative_rate", c.false_negative_rate);
  r.read("true_score_spread", c.true_score_spread);
  r.read("false_score_max", c.false_score_max);
  r.read("hard_actor_probability", c.hard_actor_probability);
  r.read("hard_score_min", c.hard_score_min);
  r.read("hard_score_max", c.hard_score_max);
  r.read("signature_magnitude", c.signature_magnitude);
  r.read("appearance_magnitude", c.appearance_magnitude);
  r.read("appearance_palette", c.appearance_palette);
  r.read("actor_feature_noise", c.actor_feature_noise);
  r.read("scene_noise", c.scene_noise);
  r.read("pair_probability", c.pair_probability);
  r.read("pair_distance", c.pair_distance);
  r.read("pair_action_probability", c.pair_action_probability);
  r.read("object_action_probability", c.object_action_probability);
  r.read("momentary_probability", c.momentary_probability);
  r.read("sustained_min", c.sustained_min);
  r.read("sustained_max", c.sustained_max);
  r.read("momentary_min", c.momentary_min);
  r.read("momentary_max", c.momentary_max);
  r.read("occlusion_probability", c.occlusion_probability);
  r.read("occlusion_min", c.occlusion_min);
  r.read("occlusion_max", c.occlusion_max);
  r.read("distractor_probability", c.distractor_probability);
  r.read("distractor_min_offset", c.distractor_min_offset);
  r.read("distractor_max_offset", c.distractor_max_offset);
  r.read("timeline_half_span", c.timeline_half_span);
  r.read("slice_period", c.slice_period);
  r.finish();
  c.validate();
  return c;
}

std::shared_ptr<const SyntheticWorld> SyntheticWorld::create(const ScenarioConfig& config) {
  config.validate();
  auto w = std::make_shared<SyntheticWorld>();
  w->config = config;
  RngStream rng(config.seed, 0);
  const int p = config.appearance_palette;
  const bool shared_basis = config.num_classes + p <= config.scene_feature_dim;
  const int basis = config.num_classes + (shared_basis ? p : 0);
  Tensor g(config.scene_feature_dim, basis);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() *
                            Eigen::MatrixXd::Identity(config.scene_feature_dim, basis);
  w->signatures = q.leftCols(config.num_classes);
  if (shared_basis) {
    w->palette = q.rightCols(p);
  } else {
    w->palette.resize(config.scene_feature_dim, p);
    for (int j = 0; j < p; ++j) w->palette.col(j) = random_unit(config.scene_feature_dim, rng);
  }
  w->appearance_to_feature.resize(config.actor_feature_dim, config.scene_feature_dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(config.scene_feature_dim));
  for (Eigen::Index i = 0; i < w->appearance_to_feature.size(); ++i) {
    w->appearance_to_feature.data()[i] = s * rng.normal();
  }
  return w;
}

std::pair<int, int> cell_of(double x, double y, int height, int width) {
  const int row = std::clamp(static_cast<int>(std::floor(y * height)), 0, height - 1);
  const int col = std::clamp(static_cast<int>(std::floor(x * width)), 0, width - 1);
  return {row, col};
}

namespace {

struct Layout {
  std::vector<BoundingBox> boxes;
  std::vector<int> partner;
};

double center_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.center_x() - b.center_x(), a.center_y() - b.center_y());
}

std::pair<int, int> center_cell(const BoundingBox& b, const ScenarioConfig& c) {
  return cell_of(b.center_x(), b.center_y(), c.grid_height, c.grid_width);
}

std::pair<int, int> mid_cell(const BoundingBox& a, const BoundingBox& b, const ScenarioConfig& c) {
  return cell_of(0.5 * (a.center_x() + b.center_x()), 0.5 * (a.center_y() + b.center_y()), c.grid_height,
                 c.grid_width);
}

BoundingBox box_around(double cx, double cy, double w, double h) {
  return BoundingBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Candidate must keep every actor's center cell private, keep pair midpoints
// off other actors' centers, and stay clear of everyone but its partner.
bool acceptable(const Layout& l, const BoundingBox& cand, int partner, const ScenarioConfig& c) {
  if (!is_valid(cand)) return false;
  const auto cell = center_cell(cand, c);
  for (std::size_t j = 0; j < l.boxes.size(); ++j) {
    const BoundingBox& other = l.boxes[j];
    if (center_cell(other, c) == cell) return false;
    if (iou(other, cand) > 0.3) return false;
    if (static_cast<int>(j) != partner && center_distance(other, cand) < 1.2 * c.pair_distance) return false;
    if (l.partner[j] >= 0 && mid_cell(other, l.boxes[l.partner[j]], c) == cell) return false;
  }
  if (partner >= 0) {
    if (center_distance(l.boxes[partner], cand) > c.pair_distance) return false;
    const auto mid = mid_cell(l.boxes[partner], cand, c);
    for (std::size_t j = 0; j < l.boxes.size(); ++j) {
      if (static_cast<int>(j) != partner && center_cell(l.boxes[j], c) == mid) return false;
    }
  }
  return true;
}

Layout place_actors(int count, const ScenarioConfig& c, RngStream& rng) {
  Layout l;
  for (int a = 0; a < count; ++a) {
    int partner = -1;
    if (rng.uniform() < c.pair_probability) {
      std::vector<int> free;
      for (std::size_t j = 0; j < l.boxes.size(); ++j)
        if (l.partner[j] < 0) free.push_back(static_cast<int>(j));
      if (!free.empty()) partner = free[rng.below(free.size())];
    }
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      // fall back to an unpaired placement once pairing keeps failing
      const int p = attempt < 100 ? partner : -1;
      const double w = rng.uniform(0.12, 0.22), h = rng.uniform(0.25, 0.4);
      double cx, cy;
      if (p >= 0) {
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double dist = rng.uniform(0.4, 0.9) * c.pair_distance;
        cx = l.boxes[p].center_x() + dist * std::cos(angle);
        cy = l.boxes[p].center_y() + dist * std::sin(angle);
      } else {
        cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
        cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
      }
      const BoundingBox cand = box_around(cx, cy, w, h);
      if (!acceptable(l, cand, p, c)) continue;
      l.boxes.push_back(cand);
      l.partner.push_back(p);
      if (p >= 0) l.partner[p] = a;
      placed = true;
    }
    if (!placed) break;  // crowded frame: keep the actors placed so far
  }
  return l;
}

ActionInstance make_action(int class_id, double t, const ScenarioConfig& c, RngStream& rng) {
  ActionInstance a;
  a.class_id = class_id;
  a.momentary = rng.uniform() < c.momentary_probability;
  const double lo = a.momentary ? c.momentary_min : c.sustained_min;
  const double hi = a.momentary ? c.momentary_max : c.sustained_max;
  a.start = t - rng.uniform(lo, hi);
  a.end = t + rng.uniform(lo, hi);
  return a;
}

}  // namespace

ClipSample generate_clip(const std::shared_ptr<const SyntheticWorld>& world, RngStream rng, std::string id,
                         double keyframe_time) {
  const ScenarioConfig& c = world->config;
  const int per = c.num_classes / 3;
  ClipSample s;
  s.id = std::move(id);
  s.stream = rng.stream_id();
  s.keyframe_time = keyframe_time;
  s.world = world;
  const double t = keyframe_time;

  RngStream layout_rng = rng.split(kLayoutKey);
  const int count = c.num_actors_min + static_cast<int>(layout_rng.below(c.num_actors_max - c.num_actors_min + 1));
  const Layout layout = place_actors(count, c, layout_rng);
  const int n = static_cast<int>(layout.boxes.size());
  s.actors.resize(n);
  std::vector<int> unused(static_cast<std::size_t>(c.appearance_palette));
  std::iota(unused.begin(), unused.end(), 0);
  for (int a = 0; a < n; ++a) {
    SyntheticActor& actor = s.actors[a];
    actor.box = layout.boxes[a];
    if (unused.empty()) {
      actor.appearance = random_unit(c.scene_feature_dim, layout_rng);
    } else {
      const auto pick = unused.begin() + static_cast<std::ptrdiff_t>(layout_rng.below(unused.size()));
      actor.appearance = world->palette.col(*pick);
      unused.erase(pick);
    }
    actor.actions.push_back(make_action(static_cast<int>(layout_rng.below(per)), t, c, layout_rng));
    if (layout_rng.uniform() < c.object_action_probability) {
      actor.actions.push_back(make_action(2 * per + static_cast<int>(layout_rng.below(per)), t, c, layout_rng));
    }
  }
  for (int a = 0; a < n; ++a) {
    const int b = layout.partner[a];
    if (b <= a) continue;
    if (layout_rng.uniform() < c.pair_action_probability) {
      ActionInstance act = make_action(per + static_cast<int>(layout_rng.below(per)), t, c, layout_rng);
      act.partner = b;
      s.actors[a].actions.push_back(act);
      act.partner = a;
      s.actors[b].actions.push_back(act);
    }
  }
  for (int a = 0; a < n; ++a) {
    SyntheticActor& actor = s.actors[a];
    if (layout_rng.uniform() < c.occlusion_probability) {
      actor.occluded = true;
      actor.occlusion_start = t - layout_rng.uniform(c.occlusion_min, c.occlusion_max);
      actor.occlusion_end = t + layout_rng.uniform(c.occlusion_min, c.occlusion_max);
    }
    if (layout_rng.uniform() < c.distractor_probability) {
      std::vector<int> candidates;
      for (int k = 0; k < c.num_classes; ++k) {
        if (c.category_of(k) == ActionCategory::PersonPerson) continue;
        const bool held = std::any_of(actor.actions.begin(), actor.actions.end(),
                                      [&](const ActionInstance& x) { return x.class_id == k; });
        if (!held) candidates.push_back(k);
      }
      ActionInstance d;
      d.class_id = candidates[layout_rng.below(candidates.size())];
      d.distractor = true;
      const double sign = layout_rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double near = t + sign * c.distractor_min_offset, far = t + sign * c.distractor_max_offset;
      d.start = std::min(near, far);
      d.end = std::max(near, far);
      actor.actions.push_back(d);
    }
  }

  for (const SyntheticActor& actor : s.actors) {
    GroundTruthActor gt{actor.box, {}};
    for (const auto& act : actor.actions)
      if (!act.distractor && act.active_at(t)) gt.classes.push_back(act.class_id);
    std::sort(gt.classes.begin(), gt.classes.end());
    gt.classes.erase(std::unique(gt.classes.begin(), gt.classes.end()), gt.classes.end());
    s.ground_truth.push_back(std::move(gt));
  }

  RngStream det_rng = rng.split(kDetectorKey);
  auto feature_for = [&](const Vector& appearance) {
    Vector f = c.appearance_magnitude * (world->appearance_to_feature * appearance);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) += c.actor_feature_noise * det_rng.normal();
    return f;
  };
  auto finish = [](ActorProposal& p) { p.geometry = geometry_vector(p.box); };
  for (const SyntheticActor& actor : s.actors) {
    if (det_rng.uniform() < c.false_negative_rate) continue;
    const BoundingBox& b = actor.box;
    const double sw = c.box_jitter * b.width(), sh = c.box_jitter * b.height();
    ActorProposal p;
    p.box = clamp_box(b.x_lt + sw * det_rng.normal(), b.y_lt + sh * det_rng.normal(), b.x_rb + sw * det_rng.normal(),
                      b.y_rb + sh * det_rng.normal());
    if (det_rng.uniform() < c.hard_actor_probability) {
      p.person_score = det_rng.uniform(c.hard_score_min, c.hard_score_max);
    } else {
      p.person_score = std::clamp(1.0 - c.true_score_spread * exponential(det_rng), 0.05, 1.0);
    }
    p.feature = feature_for(actor.appearance);
    finish(p);
    s.detections.push_back(std::move(p));
  }
  for (int a = 0; a < n; ++a) {
    if (det_rng.uniform() >= c.false_positive_rate) continue;
    const double w = det_rng.uniform(0.05, 0.3), h = det_rng.uniform(0.05, 0.4);
    const double cx = det_rng.uniform(0.5 * w, 1.0 - 0.5 * w), cy = det_rng.uniform(0.5 * h, 1.0 - 0.5 * h);
    ActorProposal p;
    p.box = clamp_box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
    p.person_score = det_rng.uniform(0.0, c.false_score_max);
    p.feature = feature_for(random_unit(c.scene_feature_dim, det_rng));
    finish(p);
    s.detections.push_back(std::move(p));
  }
  return s;
}

ClipSample generate_clip(const ScenarioConfig& cfg, RngStream& rng) {
  return generate_clip(SyntheticWorld::create(cfg), rng, "clip_" + std::to_string(rng.stream_id()), 0.0);
}

int ClipSample::max_slice() const {
  const ScenarioConfig& c = world->config;
  return static_cast<int>(std::floor(c.timeline_half_span / c.slice_period + 1e-9));
}

double ClipSample::timeline_start() const { return keyframe_time - max_slice() * world->config.slice_period; }
double ClipSample::timeline_end() const { return keyframe_time + max_slice() * world->config.slice_period; }

int ClipSample::slice_index(double t) const {
  const int i = static_cast<int>(std::lround((t - keyframe_time) / world->config.slice_period));
  return std::clamp(i, -max_slice(), max_slice());
}

Tensor ClipSample::slice(int index) const {
  const ScenarioConfig& c = world->config;
  const int cells = c.grid_height * c.grid_width;
  RngStream noise = RngStream(c.seed, stream).split(kSliceKeyBase + static_cast<std::uint64_t>(index + (1 << 20)));
  Tensor out(c.scene_feature_dim, cells);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = c.scene_noise * noise.normal();
  const double t = keyframe_time + index * c.slice_period;
  auto col = [&](std::pair<int, int> rc) { return out.col(rc.first * c.grid_width + rc.second); };
  for (std::size_t a = 0; a < actors.size(); ++a) {
    const SyntheticActor& actor = actors[a];
    auto home = col(center_cell(actor.box, c));
    home += c.appearance_magnitude * actor.appearance;
    for (const auto& act : actor.actions) {
      if (!act.active_at(t)) continue;
      if (act.partner < 0) {
        if (!actor.hidden_at(t)) home += c.signature_magnitude * world->signatures.col(act.class_id);
        continue;
      }
      // each pair is drawn once, from its lower-indexed member
      if (act.partner < static_cast<int>(a)) continue;
      const SyntheticActor& other = actors[act.partner];
      if (actor.hidden_at(t) || other.hidden_at(t)) continue;
      auto mid = col(mid_cell(actor.box, other.box, c));
      mid += c.signature_magnitude * world->signatures.col(act.class_id);
      mid += c.appearance_magnitude * (actor.appearance + other.appearance);
    }
  }
  return out;
}

SceneContextGrid ClipSample::grid(double start, double end) const {
  const ScenarioConfig& c = world->config;
  const int cells = c.grid_height * c.grid_width;
  SceneContextGrid g{c.grid_height, c.grid_width, c.grid_frames, Tensor(c.scene_feature_dim, cells * c.grid_frames)};
  for (int f = 0; f < c.grid_frames; ++f) {
    const double time =
        c.grid_frames == 1 ? 0.5 * (start + end) : start + (end - start) * f / static_cast<double>(c.grid_frames - 1);
    g.features.middleCols(static_cast<Eigen::Index>(f) * cells, cells) = slice(slice_index(time));
  }
  return g;
}

SceneContextGrid ClipSample::short_clip(double half_span, double offset) const {
  const double centre = keyframe_time + offset;
  return grid(centre - half_span, centre + half_span);
}

const ClipSample* SyntheticDataset::find(const std::string& id) const {
  for (const auto* split : {&train, &eval})
    for (const auto& s : *split)
      if (s.id == id) return &s;
  return nullptr;
}

SyntheticDataset generate_dataset(const ScenarioConfig& cfg, int threads) {
  SyntheticDataset d;
  d.world = SyntheticWorld::create(cfg);
  std::vector<ClipSample> all(static_cast<std::size_t>(cfg.clip_count()));
  parallel_for(all.size(), threads, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "clip_%04zu", i);
    all[i] = generate_clip(d.world, RngStream(cfg.seed, i + 1), id, 900.0 + static_cast<double>(i));
  });
  d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cfg.train_clips));
  d.eval.assign(std::make_move_iterator(all.begin() + cfg.train_clips), std::make_move_iterator(all.end()));
  return d;
}

ClipView temporal_augment(const ClipSample& sample, double range, double half_span, RngStream& rng) {
  if (range < 0.0) throw ConfigError("temporal augmentation range must be non-negative");
  const double slack = sample.world->config.timeline_half_span - half_span;
  if (range > slack + 1e-12) {
    throw ConfigError("temporal augmentation range " + std::to_string(range) + " s exceeds the timeline slack of " +
                      std::to_string(slack) + " s");
  }
  const double u = rng.uniform();
  return ClipView{&sample, range == 0.0 ? 0.0 : range * (2.0 * u - 1.0)};
}

ActorProposal dummy_proposal(int feature_dim) {
  ActorProposal p;
  const double half = 0.005;
  p.box = BoundingBox{0.5 - half, 0.5 - half, 0.5 + half, 0.5 + half};
  p.person_score = 0.0;
  p.feature = Vector::Zero(feature_dim);
  p.geometry = geometry_vector(p.box);
  p.dummy = true;
  return p;
}

std::vector<ActorProposal> sample_proposals(std::span<const ActorProposal> detections, const ProposalSampling& mode,
                                            int feature_dim) {
  if (mode.k <= 0) throw ConfigError("proposal count must be positive");
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].person_score > detections[b].person_score;
  });
  std::vector<ActorProposal> out;
  out.reserve(static_cast<std::size_t>(mode.k));
  for (std::size_t i : order) {
    if (out.size() == static_cast<std::size_t>(mode.k)) break;
    if (mode.mode == ProposalSampling::Mode::Threshold && detections[i].person_score < mode.threshold) break;
    out.push_back(detections[i]);
  }
  if (detections.empty()) std::clog << "note: no detections; returning " << mode.k << " dummy proposals\n";
  while (out.size() < static_cast<std::size_t>(mode.k)) out.push_back(dummy_proposal(feature_dim));
  return out;
}

}  // namespace jarvis
