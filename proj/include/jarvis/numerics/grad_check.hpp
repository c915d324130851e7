#pragma once

#include "jarvis/numerics/autodiff.hpp"

#include <functional>
#include <string>
#include <vector>

namespace jarvis {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Denominator floor of the relative error, so entries whose true
  /// gradient is ~0 are judged on absolute error.
  double abs_floor = 1e-6;
};

/// Compares tape gradients of `loss_fn` with central differences on every
/// entry of every non-frozen parameter. `loss_fn` must build a scalar on the
/// supplied tape and be deterministic.
GradCheckReport grad_check(ParameterSet& params, const std::function<Var(Tape&)>& loss_fn,
                           const GradCheckOptions& options = {});

}  // namespace jarvis
