// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dofa/losses.hpp"
#include "dofa/train/checkpoint.hpp"
#include "dofa/train/run_config.hpp"

namespace dofa::train {

struct InitGenResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Loss before each update, then the final loss.
  std::vector<double> losses;
  std::size_t steps_run = 0;
};

/// Fits the generator's RGB output to the teacher's patch-embedding kernel
/// and bias with AdamW (no weight decay, constant lr). Stops early once the
/// loss is at or below `tolerance`. Throws nn::ShapeError when the generator
/// width differs from the teacher's.
InitGenResult init_generator(WeightGenerator<float>& gen, const TeacherModel<float>& teacher, const InitGenConfig& cfg,
                             double tolerance = 1e-12);

/// Generator-only checkpoint holding the encoder generator's parameters.
Checkpoint generator_checkpoint(DofaModel<float>& model);

}  // namespace dofa::train
