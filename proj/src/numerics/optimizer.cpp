#include "jarvis/numerics/optimizer.hpp"

#include "jarvis/numerics/errors.hpp"

#include <cmath>

namespace jarvis {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("AdamW betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("AdamW eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip norm must be non-negative");
}

AdamW::AdamW(ParameterSet& params, AdamWConfig config) : params_(&params), config_(config) {
  config_.validate();
  for (const Parameter& p : params) {
    m_.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
  }
}

double gradient_norm(const ParameterSet& params) {
  double sq = 0.0;
  for (const Parameter& p : params)
    if (p.grad.size() > 0) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double AdamW::step(double lr) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  for (const Parameter& p : *params_) {
    if (p.frozen) throw ContractError("optimizer asked to update frozen parameter " + p.name);
  }
  const double norm = gradient_norm(*params_);
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Parameter& p = (*params_)[i];
    if (p.grad.size() == 0) continue;
    const Tensor g = clip * p.grad;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.value -= lr * config_.weight_decay * p.value;
    const auto denom = ((v_[i] / bc2).array().sqrt() + config_.eps);
    p.value.array() -= lr * (m_[i] / bc1).array() / denom;
  }
  return norm;
}

void AdamW::restore(std::vector<Tensor> m, std::vector<Tensor> v, std::uint64_t steps) {
  if (m.size() != params_->size() || v.size() != params_->size()) {
    throw DimensionError("optimizer state has " + std::to_string(m.size()) + " moments for " +
                         std::to_string(params_->size()) + " parameters");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Tensor& val = (*params_)[i].value;
    if (m[i].rows() != val.rows() || m[i].cols() != val.cols() || v[i].rows() != val.rows() ||
        v[i].cols() != val.cols()) {
      throw DimensionError("optimizer moment shape mismatch for " + (*params_)[i].name);
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps;
}

}  // namespace jarvis
