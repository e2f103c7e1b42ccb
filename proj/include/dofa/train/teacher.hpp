// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dofa/losses.hpp"
#include "dofa/train/checkpoint.hpp"

namespace dofa::train {

/// Frozen teacher with weights drawn from the model's init seed.
TeacherModel<float> random_teacher(const ModelConfig& cfg);

Checkpoint teacher_checkpoint(TeacherModel<float>& teacher, const ModelConfig& cfg);

/// Rebuilds a saved teacher; its geometry must match `cfg`.
TeacherModel<float> load_teacher(const Checkpoint& ckpt, const ModelConfig& cfg);

}  // namespace dofa::train
