// SPDX-License-Identifier: Apache-2.0

#include "dofa/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dofa/nn/rng.hpp"

namespace dofa::nn {

namespace {

double evaluate(const std::function<Var<double>()>& loss) {
  NoGradGuard no_grad;
  const double v = loss().value().item();
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var<double>()>& loss, ParameterList<double> params,
                           const GradCheckOptions& options) {
  if (options.step < 1e-6 || options.step > 1e-4) {
    throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-4]");
  }
  zero_grads(params);
  {
    auto root = loss();
    if (!std::isfinite(root.value().item())) throw std::runtime_error("grad_check: non-finite loss");
    backward(root);
  }
  if (options.corrupt_gradients) options.corrupt_gradients(params);

  GradCheckReport report;
  Rng rng(options.seed);
  for (auto* p : params) {
    if (!p->trainable()) continue;
    auto& value = p->value();
    const std::size_t n = value.numel();
    std::vector<std::size_t> picks(n);
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    if (n > options.samples_per_tensor) {
      rng.shuffle(picks.begin(), picks.end());
      picks.resize(options.samples_per_tensor);
    }
    for (auto idx : picks) {
      const double saved = value[idx];
      value[idx] = saved + options.step;
      const double up = evaluate(loss);
      value[idx] = saved - options.step;
      const double down = evaluate(loss);
      value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad()[idx];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.magnitude_floor});
      const double rel = std::abs(numeric - analytic) / denom;
      ++report.elements_checked;
      if (rel > report.max_relative_error || report.worst_parameter.empty()) {
        report.max_relative_error = rel;
        report.worst_parameter = p->name();
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace dofa::nn
