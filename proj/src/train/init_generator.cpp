// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/init_generator.hpp"

#include <cmath>

namespace dofa::train {

InitGenResult init_generator(WeightGenerator<float>& gen, const TeacherModel<float>& teacher, const InitGenConfig& cfg,
                             double tolerance) {
  const auto& kernel = teacher.patch_kernel.value();
  const auto& bias = teacher.patch_bias.value();
  auto params = gen.parameters();
  OptimConfig ocfg;
  ocfg.base_lr = cfg.lr;
  ocfg.weight_decay = 0.0;
  AdamW<float> opt(params, ocfg);

  InitGenResult result;
  for (std::size_t step = 0;; ++step) {
    nn::zero_grads(params);
    auto loss = generator_init_loss(gen, kernel, bias);
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw std::runtime_error("generator init: non-finite loss at step " + std::to_string(step));
    result.losses.push_back(value);
    if (step == cfg.steps || value <= tolerance) break;
    nn::backward(loss);
    opt.step(cfg.lr);
    ++result.steps_run;
  }
  result.initial_loss = result.losses.front();
  result.final_loss = result.losses.back();
  return result;
}

Checkpoint generator_checkpoint(DofaModel<float>& model) {
  Checkpoint c;
  c.kind = CheckpointKind::kGenerator;
  c.model = model.config;
  nn::ParameterList<float> params;
  model.enc_generator.collect(params);
  c.params = snapshot(params);
  return c;
}

}  // namespace dofa::train
