// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dofa/nn/autograd.hpp"

namespace dofa::train {

struct OptimConfig {
  double base_lr = 1.5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::size_t warmup_epochs = 5;
  std::size_t total_epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  /// 20 epochs, 5 warmup, batch 16, base_lr 1e-3.
  static OptimConfig desk();
  /// 100 epochs, 20 warmup, batch 128, base_lr 1.5e-4.
  static OptimConfig full_scale();

  /// Throws std::invalid_argument.
  void validate() const;

  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

/// Linear warmup from 0 to base_lr over the warmup epochs, then a half-cosine
/// down to 0 at total_epochs; 0 afterwards.
double lr_schedule(std::size_t step, std::size_t steps_per_epoch, const OptimConfig& cfg);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// AdamW with bias correction and decoupled weight decay. Only trainable
/// parameters move; decay skips parameters flagged as non-decaying.
template <typename T>
class AdamW {
 public:
  AdamW(nn::ParameterList<T> params, const OptimConfig& cfg);

  /// Applies one update with learning rate `lr` from the current gradients.
  /// Throws NonFiniteGradient naming the first offending parameter before
  /// touching any value.
  void step(double lr);

  std::uint64_t step_count() const { return steps_; }
  void set_step_count(std::uint64_t s) { steps_ = s; }
  const nn::ParameterList<T>& params() const { return params_; }
  /// Moment buffers, aligned with params(); frozen parameters keep zeros.
  std::vector<nn::Tensor<T>>& first_moments() { return m_; }
  std::vector<nn::Tensor<T>>& second_moments() { return v_; }

 private:
  nn::ParameterList<T> params_;
  OptimConfig cfg_;
  std::vector<nn::Tensor<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace dofa::train
