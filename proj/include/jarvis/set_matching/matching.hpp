#pragma once

#include "jarvis/geometry/box.hpp"
#include "jarvis/numerics/autodiff.hpp"
#include "jarvis/relation_model/model.hpp"
#include "jarvis/synthdata/types.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <vector>

namespace jarvis {

/// Which terms enter the pairwise matching cost.
enum class CostMode { Person, Action, Both };

std::string to_string(CostMode m);
CostMode parse_cost_mode(const std::string& s);

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
  CostMode cost_mode = CostMode::Person;

  void validate() const;
};

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path = "loss");

/// Sigmoid focal loss of one logit against a binary target.
double focal_loss(double logit, int target, const LossConfig& cfg);
/// d focal_loss / d logit.
double focal_loss_grad(double logit, int target, const LossConfig& cfg);
/// Focal loss on a probability, clamped to [1e-6, 1 - 1e-6].
double focal_loss_prob(double p, int target, const LossConfig& cfg);
/// d focal_loss_prob / dp; zero where the clamp is active.
double focal_loss_prob_grad(double p, int target, const LossConfig& cfg);

/// Detector probability mapped to a logit, clamped to [1e-6, 1 - 1e-6].
double person_logit(double probability);

struct GroundTruthEntry {
  BoundingBox box;
  /// Binary multi-label vector of length N_cls.
  Vector labels;
};

/// K targets: the first real_count are actors, the rest are padding (empty).
struct GroundTruthSet {
  std::vector<std::optional<GroundTruthEntry>> entries;
  std::size_t real_count = 0;

  std::size_t size() const { return entries.size(); }
};

/// Pads actors to K targets. When there are more actors than K the K
/// largest boxes are kept and a warning is logged.
GroundTruthSet pad_targets(std::span<const GroundTruthActor> actors, std::size_t k, int num_classes);

/// Matching cost between one target and one prediction; 0 for padding.
double pair_cost(const std::optional<GroundTruthEntry>& gt, const Prediction& pred, const LossConfig& cfg);

struct MatchResult {
  /// sigma[i] is the prediction (column) assigned to target (row) i.
  std::vector<int> sigma;
  double total_cost = 0.0;
};

/// Minimum-cost perfect assignment of a square matrix (shortest augmenting
/// path with potentials, O(K^3)).
MatchResult hungarian(const Tensor& cost);

MatchResult match(const GroundTruthSet& gts, const PredictionSet& preds, const LossConfig& cfg);

/// Sum over targets and classes of focal_loss(logits(k, sigma(i)), label);
/// padding targets are all-negative. Differentiable in `logits` (N_cls x K).
Var set_loss(const GroundTruthSet& gts, const Var& logits, std::span<const int> sigma, const LossConfig& cfg);

/// Same objective on probabilities (long-term aggregated scores).
Var set_loss_from_scores(const GroundTruthSet& gts, const Var& scores, std::span<const int> sigma,
                         const LossConfig& cfg);

}  // namespace jarvis
