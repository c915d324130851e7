#include "jarvis/set_matching/matching.hpp"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/util/json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

namespace jarvis {

namespace {
constexpr double kProbClamp = 1e-6;
}

std::string to_string(CostMode m) {
  switch (m) {
    case CostMode::Person:
      return "person";
    case CostMode::Action:
      return "action";
    case CostMode::Both:
      return "both";
  }
  return "person";
}

CostMode parse_cost_mode(const std::string& s) {
  if (s == "person") return CostMode::Person;
  if (s == "action") return CostMode::Action;
  if (s == "both") return CostMode::Both;
  throw ConfigError("unknown cost mode '" + s + "' (expected person, action, both)");
}

void LossConfig::validate() const {
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw ConfigError("focal_alpha must lie in (0, 1)");
  if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
  if (!(lambda_l1 >= 0.0) || !(lambda_giou >= 0.0)) throw ConfigError("box cost weights must be >= 0");
}

nlohmann::json to_json(const LossConfig& c) {
  return nlohmann::json{{"focal_alpha", c.focal_alpha},
                        {"focal_gamma", c.focal_gamma},
                        {"lambda_l1", c.lambda_l1},
                        {"lambda_giou", c.lambda_giou},
                        {"cost_mode", to_string(c.cost_mode)}};
}

LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path) {
  LossConfig c;
  FieldReader r(j, path);
  r.read("focal_alpha", c.focal_alpha);
  r.read("focal_gamma", c.focal_gamma);
  r.read("lambda_l1", c.lambda_l1);
  r.read("lambda_giou", c.lambda_giou);
  std::string mode;
  if (r.read("cost_mode", mode)) c.cost_mode = parse_cost_mode(mode);
  r.finish();
  c.validate();
  return c;
}

double focal_loss(double logit, int target, const LossConfig& cfg) {
  const double a = cfg.focal_alpha, g = cfg.focal_gamma;
  if (target != 0) {
    // -alpha (1-p)^gamma log p, with log p = -softplus(-x)
    return a * std::pow(sigmoid_value(-logit), g) * softplus(-logit);
  }
  return (1.0 - a) * std::pow(sigmoid_value(logit), g) * softplus(logit);
}

double focal_loss_grad(double logit, int target, const LossConfig& cfg) {
  const double a = cfg.focal_alpha, g = cfg.focal_gamma;
  const double p = sigmoid_value(logit);
  const double q = sigmoid_value(-logit);
  if (target != 0) return -a * std::pow(q, g) * (g * p * softplus(-logit) + q);
  return (1.0 - a) * std::pow(p, g) * (p + g * q * softplus(logit));
}

double focal_loss_prob(double p, int target, const LossConfig& cfg) {
  const double a = cfg.focal_alpha, g = cfg.focal_gamma;
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (target != 0) return -a * std::pow(1.0 - pc, g) * std::log(pc);
  return -(1.0 - a) * std::pow(pc, g) * std::log(1.0 - pc);
}

double focal_loss_prob_grad(double p, int target, const LossConfig& cfg) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  const double a = cfg.focal_alpha, g = cfg.focal_gamma;
  if (target != 0) {
    const double mod = g == 0.0 ? 0.0 : g * std::pow(1.0 - p, g - 1.0) * std::log(p);
    return a * (mod - std::pow(1.0 - p, g) / p);
  }
  const double mod = g == 0.0 ? 0.0 : g * std::pow(p, g - 1.0) * std::log(1.0 - p);
  return -(1.0 - a) * (mod - std::pow(p, g) / (1.0 - p));
}

double person_logit(double probability) {
  const double p = std::clamp(probability, kProbClamp, 1.0 - kProbClamp);
  return std::log(p) - std::log1p(-p);
}

GroundTruthSet pad_targets(std::span<const GroundTruthActor> actors, std::size_t k, int num_classes) {
  std::vector<std::size_t> order(actors.size());
  std::iota(order.begin(), order.end(), 0);
  if (actors.size() > k) {
    std::clog << "warning: " << actors.size() << " ground-truth actors exceed " << k
              << " proposals; keeping the largest boxes\n";
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return actors[a].box.area() > actors[b].box.area(); });
    order.resize(k);
    std::sort(order.begin(), order.end());
  }
  GroundTruthSet set;
  set.entries.resize(k);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const GroundTruthActor& a = actors[order[i]];
    GroundTruthEntry e;
    e.box = a.box;
    e.labels = Vector::Zero(num_classes);
    for (int c : a.classes) {
      if (c < 0 || c >= num_classes) throw ValidationError("class id " + std::to_string(c) + " out of range");
      e.labels(c) = 1.0;
    }
    set.entries[i] = std::move(e);
  }
  set.real_count = order.size();
  return set;
}

double pair_cost(const std::optional<GroundTruthEntry>& gt, const Prediction& pred, const LossConfig& cfg) {
  if (!gt) return 0.0;
  double cost = cfg.lambda_l1 * box_l1(gt->box, pred.box) + cfg.lambda_giou * (1.0 - giou(gt->box, pred.box));
  if (cfg.cost_mode == CostMode::Person || cfg.cost_mode == CostMode::Both) {
    cost += focal_loss(person_logit(pred.person_score), 1, cfg);
  }
  if (cfg.cost_mode == CostMode::Action || cfg.cost_mode == CostMode::Both) {
    const Eigen::Index n = gt->labels.size();
    double action = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double logit = pred.logits.size() == n ? pred.logits(k) : person_logit(pred.scores(k));
      action += focal_loss(logit, gt->labels(k) > 0.5 ? 1 : 0, cfg);
    }
    cost += n > 0 ? action / static_cast<double>(n) : 0.0;
  }
  return cost;
}

MatchResult hungarian(const Tensor& cost) {
  if (cost.rows() != cost.cols()) throw ContractError("hungarian: cost matrix is " + shape_string(cost));
  if (!cost.allFinite()) throw ContractError("hungarian: cost matrix has non-finite entries");
  const int n = static_cast<int>(cost.rows());
  MatchResult result;
  if (n == 0) return result;

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual start of each augmenting path.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> row_of_col(n + 1, 0), way(n + 1, 0);
  std::vector<double> min_slack(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    int col = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col] = 1;
      const int row = row_of_col[col];
      double delta = inf;
      int next = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double slack = cost(row - 1, j - 1) - u[row] - v[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          way[j] = col;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          next = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      col = next;
    } while (row_of_col[col] != 0);
    do {
      const int prev = way[col];
      row_of_col[col] = row_of_col[prev];
      col = prev;
    } while (col != 0);
  }
  result.sigma.assign(n, -1);
  for (int j = 1; j <= n; ++j) result.sigma[row_of_col[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) result.total_cost += cost(i, result.sigma[i]);
  return result;
}

MatchResult match(const GroundTruthSet& gts, const PredictionSet& preds, const LossConfig& cfg) {
  if (gts.size() != preds.size()) {
    throw ContractError("match: " + std::to_string(gts.size()) + " targets vs " + std::to_string(preds.size()) +
                        " predictions");
  }
  const auto k = static_cast<Eigen::Index>(gts.size());
  Tensor cost = Tensor::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!gts.entries[i]) continue;
    for (Eigen::Index j = 0; j < k; ++j) cost(i, j) = pair_cost(gts.entries[i], preds[j], cfg);
  }
  return hungarian(cost);
}

namespace {

void check_sigma(const GroundTruthSet& gts, const Tensor& values, std::span<const int> sigma) {
  const auto k = static_cast<std::size_t>(values.cols());
  if (gts.size() != k || sigma.size() != k) {
    throw ContractError("set_loss: " + std::to_string(gts.size()) + " targets, " + std::to_string(sigma.size()) +
                        " assignments, " + std::to_string(k) + " predictions");
  }
  std::vector<char> hit(k, 0);
  for (int s : sigma) {
    if (s < 0 || static_cast<std::size_t>(s) >= k || hit[s]) throw ContractError("set_loss: sigma is not a permutation");
    hit[s] = 1;
  }
}

int label_at(const GroundTruthSet& gts, std::size_t i, Eigen::Index k) {
  const auto& e = gts.entries[i];
  return e && e->labels(k) > 0.5 ? 1 : 0;
}

template <typename LossFn, typename GradFn>
Var focal_set_loss(const GroundTruthSet& gts, const Var& input, std::span<const int> sigma, LossFn loss_fn,
                   GradFn grad_fn) {
  const Tensor& x = input.value();
  check_sigma(gts, x, sigma);
  for (const auto& e : gts.entries) {
    if (e && e->labels.size() != x.rows()) throw DimensionError("set_loss: label length differs from class count");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (Eigen::Index k = 0; k < x.rows(); ++k) total += loss_fn(x(k, sigma[i]), label_at(gts, i, k));
  }
  Tensor out(1, 1);
  out(0, 0) = total;
  const std::size_t id = input.id();
  std::vector<int> sig(sigma.begin(), sigma.end());
  return input.tape()->record(std::move(out), input.requires_grad(),
                              [id, gts, sig = std::move(sig), grad_fn](Tape& tp, const Tensor& g) {
                                const Tensor& xv = tp.value(id);
                                Tensor grad = Tensor::Zero(xv.rows(), xv.cols());
                                for (std::size_t i = 0; i < gts.size(); ++i) {
                                  for (Eigen::Index k = 0; k < xv.rows(); ++k) {
                                    grad(k, sig[i]) = g(0, 0) * grad_fn(xv(k, sig[i]), label_at(gts, i, k));
                                  }
                                }
                                tp.accumulate(id, grad);
                              });
}

}  // namespace

Var set_loss(const GroundTruthSet& gts, const Var& logits, std::span<const int> sigma, const LossConfig& cfg) {
  return focal_set_loss(
      gts, logits, sigma, [cfg](double x, int t) { return focal_loss(x, t, cfg); },
      [cfg](double x, int t) { return focal_loss_grad(x, t, cfg); });
}

Var set_loss_from_scores(const GroundTruthSet& gts, const Var& scores, std::span<const int> sigma,
                         const LossConfig& cfg) {
  return focal_set_loss(
      gts, scores, sigma, [cfg](double p, int t) { return focal_loss_prob(p, t, cfg); },
      [cfg](double p, int t) { return focal_loss_prob_grad(p, t, cfg); });
}

}  // namespace jarvis
