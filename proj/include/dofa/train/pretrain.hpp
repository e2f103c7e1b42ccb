// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "dofa/data/dataset.hpp"
#include "dofa/train/checkpoint.hpp"

namespace dofa::train {

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainOptions {
  ModelConfig model;
  OptimConfig optim;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  /// Teacher checkpoint; a frozen random teacher is built when absent.
  std::optional<std::filesystem::path> teacher;
  /// Generator checkpoint from init_generator.
  std::optional<std::filesystem::path> init_gen;
  /// Checkpoint written at the end of an earlier epoch.
  std::optional<std::filesystem::path> resume;
  /// Stop once this many epochs are complete (the schedule still spans
  /// optim.total_epochs).
  std::optional<std::size_t> stop_after_epoch;
  /// Human-readable progress; nothing is printed when null.
  std::ostream* progress = nullptr;
};

struct EpochSummary {
  std::size_t epoch = 0;  // 1-based
  double recon = 0.0;
  double distill_cos = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  std::vector<MetricRecord> history;
  std::vector<EpochSummary> epochs;
  std::size_t steps_per_epoch = 0;
  std::filesystem::path last_checkpoint;
  double seconds = 0.0;
};

/// Runs composite-loss pretraining. Writes `metrics.tsv` (one line per step:
/// step, lr, recon, distill, total) and `checkpoints/epoch_NNN.dofc` after
/// every epoch into out_dir. Throws NonFiniteLoss naming the batch's samples.
PretrainResult pretrain(const PretrainOptions& opts);

/// Mean metrics per epoch.
std::vector<EpochSummary> summarize_epochs(const std::vector<MetricRecord>& history, std::size_t steps_per_epoch);

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& out_dir, std::size_t epoch);

}  // namespace dofa::train
