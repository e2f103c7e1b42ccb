// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "dofa/nn/autograd.hpp"

namespace dofa::nn {

struct GradCheckOptions {
  double step = 1e-5;
  /// Elements probed per parameter tensor; tensors at or below this size are
  /// checked exhaustively.
  std::size_t samples_per_tensor = 8;
  /// Denominator floor so that near-zero gradients compare absolutely.
  double magnitude_floor = 1e-6;
  std::uint64_t seed = 0;
  /// Test hook run between backward and the comparison (fault injection).
  std::function<void(ParameterList<double>&)> corrupt_gradients;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
};

/// Compares analytic gradients of `loss` against central differences
/// (f(θ+h) − f(θ−h)) / 2h. Only 64-bit parameters are accepted.
/// Throws std::runtime_error when the loss is not finite.
GradCheckReport grad_check(const std::function<Var<double>()>& loss, ParameterList<double> params,
                           const GradCheckOptions& options = {});

}  // namespace dofa::nn
