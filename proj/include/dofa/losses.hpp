// SPDX-License-Identifier: Apache-2.0

// Pretraining objective: masked reconstruction error minus the cosine
// similarity between projected student features and frozen-teacher features
// on a 3-channel RGB view of the same image.

#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "dofa/model.hpp"

namespace dofa {

struct TeacherConfig {
  std::size_t patch_size = 16;
  std::size_t image_size = 32;
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::uint64_t init_seed = 1;

  static TeacherConfig matching(const ModelConfig& cfg, std::uint64_t seed);
};

/// Plain 3-channel ViT with a fixed patch-embedding convolution. All of its
/// parameters are frozen: no graph is recorded through them.
template <typename T>
class TeacherModel {
 public:
  explicit TeacherModel(const TeacherConfig& cfg);

  /// Mean of patch tokens after the final norm, [D_t]; a constant.
  Tensor<T> features(const Tensor<T>& rgb) const;

  nn::ParameterList<T> parameters();

  TeacherConfig config;
  Parameter<T> patch_kernel;  // [D_t, 3, P, P]
  Parameter<T> patch_bias;    // [D_t]
  Parameter<T> cls_token;
  Tensor<T> pos_embed;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> norm;
};

/// Selected RGB bands, or a replicated radar channel, labelled with the
/// teacher's RGB wavelengths.
struct ProxyRule {
  std::optional<std::array<std::size_t, 3>> rgb_indices;
  bool is_sar = false;
};

/// Source channel of each proxy plane (R, G, B).
std::array<std::size_t, 3> proxy_channels(const ProxyRule& rule, std::size_t channels, std::uint64_t seed);

/// Returns the [3, H, W] proxy image. For SAR input one of the channels is
/// chosen with `seed` and copied three times. Throws std::invalid_argument
/// when the rule cannot apply to the image.
template <typename T>
Tensor<T> make_proxy(const Tensor<T>& image, const ProxyRule& rule, std::uint64_t seed);

/// Mean squared error over the masked patches (every patch when
/// `all_patches`), averaged over patches and patch elements.
template <typename T>
Var<T> reconstruction_loss(const Var<T>& pred, const Tensor<T>& target_patches, const MaskPlan& plan,
                           bool all_patches = false);

inline constexpr double kCosineEps = 1e-8;

/// −cos(proj(student), teacher).
template <typename T>
Var<T> distillation_loss(const Var<T>& student, const Tensor<T>& teacher, const nn::Linear<T>& proj);

struct LossBreakdown {
  double recon_mse = 0.0;
  double distill_cos = 0.0;
  double total = 0.0;
};

template <typename T>
struct CompositeLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

/// Generated weights shared by every sample of one modality batch.
template <typename T>
struct BatchWeights {
  DynamicKernel<T> encoder;
  DecoderHead<T> decoder;
  DynamicKernel<T> proxy;
};

template <typename T>
BatchWeights<T> prepare_batch_weights(const DofaModel<T>& model, const Wavelengths& lambdas);

/// Full-channel masked reconstruction plus unmasked proxy distillation.
/// `teacher_features` is the teacher's output on `proxy`.
template <typename T>
CompositeLoss<T> composite_loss(const Tensor<T>& image, const Tensor<T>& proxy, const Tensor<T>& teacher_features,
                                const MaskPlan& plan, const DofaModel<T>& model, const BatchWeights<T>& weights);

/// Convenience form: derives mask plan and proxy from `seed`, runs the teacher.
template <typename T>
CompositeLoss<T> composite_loss(const Tensor<T>& image, const Wavelengths& lambdas, const ProxyRule& rule,
                                const DofaModel<T>& model, const TeacherModel<T>& teacher, std::uint64_t seed);

/// MSE of the generated RGB kernel against the teacher kernel plus MSE of the
/// biases. The generator must produce the teacher's width.
template <typename T>
Var<T> generator_init_loss(const WeightGenerator<T>& gen, const Tensor<T>& teacher_kernel,
                           const Tensor<T>& teacher_bias, const Wavelengths& rgb = rgb_wavelengths());

}  // namespace dofa
