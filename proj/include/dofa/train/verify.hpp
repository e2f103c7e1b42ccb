// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dofa/model.hpp"
#include "dofa/nn/grad_check.hpp"

namespace dofa::train {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Adds 202-channel shape checks and denser gradient sampling.
  bool full = false;
  /// Fault-injection hook forwarded to the composite-loss gradient check.
  std::function<void(nn::ParameterList<double>&)> corrupt_gradients;
};

/// Runs the in-process invariant suite. A check that throws is reported as
/// failed with the exception text.
std::vector<VerifyCheck> run_verify(const VerifyOptions& opts);

/// Tiny model used by the gradient check: D = 64, depth 2, 32 x 32 input.
ModelConfig grad_check_config();

}  // namespace dofa::train
