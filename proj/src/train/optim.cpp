// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/optim.hpp"

#include <cmath>
#include <numbers>

namespace dofa::train {

OptimConfig OptimConfig::desk() {
  OptimConfig cfg;
  // Twenty epochs over a few hundred samples is too short for the large-scale
  // rate to move the encoder far from its initialization.
  cfg.base_lr = 1e-3;
  return cfg;
}

OptimConfig OptimConfig::full_scale() {
  OptimConfig cfg;
  cfg.warmup_epochs = 20;
  cfg.total_epochs = 100;
  cfg.batch_size = 128;
  return cfg;
}

void OptimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("optim config: " + msg); };
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) fail("base_lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (total_epochs == 0 || batch_size == 0) fail("total_epochs and batch_size must be positive");
  if (warmup_epochs >= total_epochs) fail("warmup_epochs must be below total_epochs");
}

double lr_schedule(std::size_t step, std::size_t steps_per_epoch, const OptimConfig& cfg) {
  if (steps_per_epoch == 0) throw std::invalid_argument("lr_schedule: steps_per_epoch must be positive");
  const double warmup = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(cfg.total_epochs * steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warmup) return cfg.base_lr * s / warmup;
  if (s >= total) return 0.0;
  const double progress = (s - warmup) / (total - warmup);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
AdamW<T>::AdamW(nn::ParameterList<T> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  for (auto* p : params_) {
    if (p->trainable() && !nn::all_finite(p->grad())) {
      throw NonFiniteGradient("non-finite gradient in parameter '" + p->name() + "'");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    if (!p->trainable()) continue;
    auto w = p->value().data();
    auto g = p->grad().data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    const double shrink = p->decay() ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) * shrink - lr * update);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace dofa::train
