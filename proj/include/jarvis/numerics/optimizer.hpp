#pragma once

#include "jarvis/numerics/tensor.hpp"

#include <cstdint>
#include <vector>

namespace jarvis {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;

  void validate() const;
};

/// Adam with decoupled weight decay over every parameter of a set. The set
/// must not contain frozen parameters.
class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWConfig config);

  /// Applies one update from the accumulated gradients, then leaves them in
  /// place. Returns the gradient norm before clipping.
  double step(double lr);

  std::uint64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

  /// First and second moments, in parameter order.
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::uint64_t steps);

 private:
  ParameterSet* params_;
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

/// sqrt of the sum of squared gradient entries.
double gradient_norm(const ParameterSet& params);

}  // namespace jarvis
