#include "jarvis/numerics/grad_check.hpp"

#include "jarvis/numerics/errors.hpp"

#include <algorithm>
#include <cmath>

namespace jarvis {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(ParameterSet& params, const std::function<Var(Tape&)>& loss_fn,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("grad_check: step must be positive");

  params.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }

  auto evaluate = [&] {
    Tape tape;
    return loss_fn(tape).value()(0, 0);
  };

  GradCheckReport report;
  for (auto& p : params) {
    if (p.frozen) continue;
    GradCheckEntry entry;
    entry.name = p.name;
    const Tensor analytic = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& w = p.value.data()[i];
      const double saved = w;
      w = saved + options.step;
      const double up = evaluate();
      w = saved - options.step;
      const double down = evaluate();
      w = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.data()[i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
    }
    entry.passed = entry.max_rel_error <= options.tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace jarvis
