// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <vector>

#include "dofa/data/dataset.hpp"
#include "dofa/train/run_config.hpp"

namespace dofa::train {

class ProbeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProbeEpoch {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct ProbeResult {
  /// Hold-out accuracy for each swept learning rate.
  std::vector<std::pair<double, double>> sweep;
  double best_lr = 0.0;
  /// Training on the full train split with best_lr.
  std::vector<ProbeEpoch> history;
  /// confusion[true][predicted] on the validation split.
  std::vector<std::vector<std::size_t>> confusion;
  double val_top1 = 0.0;
  double seconds = 0.0;
};

/// Mean-pooled patch tokens of the unmasked encoder, [N, D]. Kernels are
/// generated once per modality. No graph is recorded.
nn::Tensor<float> extract_features(const DofaModel<float>& model, const data::Dataset& ds);

/// Labels of every sample; throws ProbeError naming the first unlabeled one.
std::vector<int> require_labels(const data::Dataset& ds);

/// Softmax regression on standardized features with momentum SGD and a
/// half-cosine lr decay over the epochs. The lr is
/// chosen on a seeded 20% hold-out of the training features, then the layer
/// is retrained on all of them.
ProbeResult fit_linear_probe(const nn::Tensor<float>& train_x, const std::vector<int>& train_y,
                             const nn::Tensor<float>& val_x, const std::vector<int>& val_y, const ProbeConfig& cfg,
                             std::uint64_t seed);

/// Frozen-encoder probe. Throws std::logic_error if any encoder parameter
/// changed or received a gradient.
ProbeResult linear_probe(DofaModel<float>& model, const data::Dataset& train, const data::Dataset& val,
                         const ProbeConfig& cfg, std::uint64_t seed);

}  // namespace dofa::train
