// SPDX-License-Identifier: Apache-2.0

// Checkpoint file layout (little-endian):
//   "DOFC" | u16 version | u32 length + INI text (kind, model, optimizer
//   settings, step counters, metric history) | parameter table | optimizer
//   table | u32 CRC-32 of everything before it
// A table is u32 count, then per tensor: u32 length + name, u8 rank,
// rank x u32 dims, float32 payload.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dofa/model.hpp"
#include "dofa/train/optim.hpp"

namespace dofa::train {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kUnsupportedVersion, kTruncated, kBadCrc, kMalformed, kMismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class CheckpointKind { kModel, kTeacher, kGenerator };

struct MetricRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double recon = 0.0;
  double distill = 0.0;
  double total = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// All randomness in training is derived from (optim.seed, step), so the
/// step counter doubles as the RNG state.
struct TrainState {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::vector<MetricRecord> history;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct NamedTensor {
  std::string name;
  nn::Tensor<float> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::kModel;
  ModelConfig model;
  OptimConfig optim;
  TrainState state;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameter values as float32.
template <typename T>
std::vector<NamedTensor> snapshot(const nn::ParameterList<T>& params);

/// Copies tensors into `params`. Every tensor must match a parameter by name
/// and shape; with `require_all` every parameter must also be covered.
/// Throws CheckpointError(kMismatch).
template <typename T>
void restore(const std::vector<NamedTensor>& tensors, const nn::ParameterList<T>& params, bool require_all = true);

/// Optimizer moments as tables named "m:<param>" and "v:<param>".
std::vector<NamedTensor> snapshot_optimizer(AdamW<float>& opt);
void restore_optimizer(const std::vector<NamedTensor>& tensors, AdamW<float>& opt);

/// Model checkpoint without optimizer state.
Checkpoint model_checkpoint(DofaModel<float>& model);
/// Builds the model described by a model checkpoint and loads its weights.
DofaModel<float> load_model(const Checkpoint& ckpt);

}  // namespace dofa::train
