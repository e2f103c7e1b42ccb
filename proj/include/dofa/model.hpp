// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dofa/hypernet.hpp"

namespace dofa {

struct ModelConfig {
  std::size_t patch_size = 16;
  std::size_t image_size = 32;
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t decoder_dim = 48;
  std::size_t decoder_depth = 1;
  std::size_t decoder_heads = 4;
  std::size_t wave_dim = 128;
  std::size_t num_weight_tokens = 16;
  double mask_ratio = 0.75;
  /// Frozen RGB teacher used for distillation.
  std::size_t teacher_dim = 64;
  std::size_t teacher_depth = 2;
  std::size_t teacher_heads = 4;
  /// Reconstruction loss over every patch instead of only masked ones.
  bool recon_on_all_patches = false;
  std::uint64_t init_seed = 0;

  static ModelConfig desk() { return {}; }
  /// ViT-Base/16 at 224 px.
  static ModelConfig full_scale();

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fixed 2-D sine-cosine table [grid² + 1, dim]; row 0 (class token) is zero.
/// The first dim/2 columns encode the column index, the rest the row index.
template <typename T>
Tensor<T> sincos_position_table(std::size_t grid, std::size_t dim);

/// Patch i covers grid cell (i / g, i % g). Each row is flattened in
/// (channel, row, col) order: element c·P² + r·P + s.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels, std::size_t height, std::size_t width,
                     std::size_t patch);

struct MaskPlan {
  std::vector<std::size_t> keep_indices;         // sorted
  std::vector<std::size_t> mask_indices;         // sorted
  /// Position of patch i inside [keep_indices ++ mask_indices].
  std::vector<std::size_t> restore_permutation;

  std::size_t num_patches() const { return restore_permutation.size(); }
  /// Throws std::invalid_argument unless the plan partitions {0..n-1}.
  void validate(std::size_t n) const;
};

/// Seeded uniform shuffle; round(N·(1 − ratio)) patches are kept, capped at
/// N − 1 so that at least one patch is always hidden.
MaskPlan random_mask(std::size_t num_patches, double mask_ratio, std::uint64_t seed);

template <typename T>
class DofaModel {
 public:
  explicit DofaModel(const ModelConfig& cfg);

  /// [N+1, D]: convolution with the generated kernel, class token prepended,
  /// position table added.
  Var<T> embed(const Tensor<T>& image, const DynamicKernel<T>& kernel) const;
  Var<T> embed(const Tensor<T>& image, const Wavelengths& lambdas) const;

  /// Encoder tokens [N_keep + 1, D] after the final norm; all N + 1 tokens when
  /// no plan is given.
  Var<T> encode(const Tensor<T>& image, const DynamicKernel<T>& kernel, const MaskPlan* plan) const;
  Var<T> encode(const Tensor<T>& image, const Wavelengths& lambdas, const MaskPlan* plan = nullptr) const;

  /// Per-patch pixel predictions [N, C·P²] from encoder output.
  Var<T> decode(const Var<T>& latent, const MaskPlan& plan, const DecoderHead<T>& head) const;
  Var<T> decode(const Var<T>& latent, const MaskPlan& plan, const Wavelengths& lambdas) const;

  /// Mean of patch tokens (class token excluded) from an unmasked encode, [D].
  Var<T> pooled_features(const Tensor<T>& image, const DynamicKernel<T>& kernel) const;

  DynamicKernel<T> encoder_weights(const Wavelengths& lambdas) const;
  DecoderHead<T> decoder_weights(const Wavelengths& lambdas) const;

  ParameterList<T> parameters();
  /// Encoder-side parameters: generator, class token, encoder blocks and norm.
  ParameterList<T> encoder_parameters();
  std::size_t parameter_count();

  ModelConfig config;
  WeightGenerator<T> enc_generator;
  WeightGenerator<T> dec_generator;
  Parameter<T> cls_token;   // [1, D]
  Parameter<T> mask_token;  // [1, D_dec]
  Tensor<T> pos_embed;      // [N+1, D], frozen
  Tensor<T> dec_pos_embed;  // [N+1, D_dec], frozen
  std::vector<nn::TransformerBlock<T>> encoder_blocks;
  nn::LayerNorm<T> encoder_norm;
  nn::Linear<T> enc_to_dec;
  std::vector<nn::TransformerBlock<T>> decoder_blocks;
  nn::LayerNorm<T> decoder_norm;
  /// Student-to-teacher feature projection used by the distillation term.
  nn::Linear<T> distill_proj;

 private:
  void check_image(const Tensor<T>& image, std::size_t channels) const;
};

/// Same architecture in another element type with identical parameter values.
template <typename To, typename From>
DofaModel<To> convert_model(DofaModel<From>& src);

}  // namespace dofa
