// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/teacher.hpp"

namespace dofa::train {

namespace {
constexpr std::uint64_t kTeacherTag = 0x7465616368657200;
}

TeacherModel<float> random_teacher(const ModelConfig& cfg) {
  return TeacherModel<float>(TeacherConfig::matching(cfg, nn::derive_seed(cfg.init_seed, {kTeacherTag})));
}

Checkpoint teacher_checkpoint(TeacherModel<float>& teacher, const ModelConfig& cfg) {
  Checkpoint c;
  c.kind = CheckpointKind::kTeacher;
  c.model = cfg;
  c.model.teacher_dim = teacher.config.embed_dim;
  c.model.teacher_depth = teacher.config.depth;
  c.model.teacher_heads = teacher.config.num_heads;
  c.params = snapshot(teacher.parameters());
  return c;
}

TeacherModel<float> load_teacher(const Checkpoint& ckpt, const ModelConfig& cfg) {
  if (ckpt.kind != CheckpointKind::kTeacher) throw CheckpointError(CheckpointError::Kind::kMismatch, "expected a teacher checkpoint");
  const auto& m = ckpt.model;
  if (m.patch_size != cfg.patch_size || m.image_size != cfg.image_size || m.teacher_dim != cfg.teacher_dim ||
      m.teacher_depth != cfg.teacher_depth || m.teacher_heads != cfg.teacher_heads) {
    throw CheckpointError(CheckpointError::Kind::kMismatch, "teacher geometry does not match the model config");
  }
  TeacherModel<float> teacher(TeacherConfig::matching(m, 0));
  restore(ckpt.params, teacher.parameters());
  return teacher;
}

}  // namespace dofa::train
