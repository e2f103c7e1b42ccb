// SPDX-License-Identifier: Apache-2.0

#include "dofa/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dofa {

using nn::ShapeError;

ModelConfig ModelConfig::full_scale() {
  ModelConfig cfg;
  cfg.image_size = 224;
  cfg.embed_dim = 768;
  cfg.depth = 12;
  cfg.num_heads = 12;
  cfg.decoder_dim = 512;
  cfg.decoder_depth = 8;
  cfg.decoder_heads = 16;
  cfg.teacher_dim = 768;
  cfg.teacher_depth = 12;
  cfg.teacher_heads = 12;
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) fail("image_size must be a multiple of patch_size");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (decoder_dim == 0 || decoder_heads == 0 || decoder_dim % decoder_heads != 0) {
    fail("decoder_dim must be divisible by decoder_heads");
  }
  if (teacher_dim == 0 || teacher_heads == 0 || teacher_dim % teacher_heads != 0) {
    fail("teacher_dim must be divisible by teacher_heads");
  }
  if (embed_dim % 4 != 0 || decoder_dim % 4 != 0 || teacher_dim % 4 != 0) {
    fail("embedding widths must be multiples of 4 for 2-D position tables");
  }
  if (wave_dim == 0 || wave_dim % 4 != 0) fail("wave_dim must be a positive multiple of 4");
  if (num_weight_tokens == 0) fail("num_weight_tokens must be positive");
  if (depth == 0) fail("depth must be positive");
  if (mlp_ratio <= 0.0) fail("mlp_ratio must be positive");
}

template <typename T>
Tensor<T> sincos_position_table(std::size_t grid, std::size_t dim) {
  if (dim % 4 != 0) throw ShapeError("position table width must be a multiple of 4");
  const std::size_t quarter = dim / 4;
  Tensor<T> table({grid * grid + 1, dim});
  for (std::size_t row = 0; row < grid; ++row) {
    for (std::size_t col = 0; col < grid; ++col) {
      const std::size_t token = 1 + row * grid + col;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        table.at(token, i) = static_cast<T>(std::sin(static_cast<double>(col) * omega));
        table.at(token, quarter + i) = static_cast<T>(std::cos(static_cast<double>(col) * omega));
        table.at(token, 2 * quarter + i) = static_cast<T>(std::sin(static_cast<double>(row) * omega));
        table.at(token, 3 * quarter + i) = static_cast<T>(std::cos(static_cast<double>(row) * omega));
      }
    }
  }
  return table;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw ShapeError("patchify expects [C, H, W], got " + nn::to_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("image " + nn::to_string(image.shape()) + " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, pp = patch * patch;
  Tensor<T> out({gh * gw, c * pp});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = 0; r < patch; ++r)
          for (std::size_t s = 0; s < patch; ++s)
            out.at(gy * gw + gx, ch * pp + r * patch + s) = image[(ch * h + gy * patch + r) * w + gx * patch + s];
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels, std::size_t height, std::size_t width,
                     std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) throw ShapeError("unpatchify: bad geometry");
  const std::size_t gh = height / patch, gw = width / patch, pp = patch * patch;
  if (patches.shape() != nn::Shape{gh * gw, channels * pp}) {
    throw ShapeError("unpatchify: patches " + nn::to_string(patches.shape()) + " do not match geometry");
  }
  Tensor<T> image({channels, height, width});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t r = 0; r < patch; ++r)
          for (std::size_t s = 0; s < patch; ++s)
            image[(ch * height + gy * patch + r) * width + gx * patch + s] =
                patches.at(gy * gw + gx, ch * pp + r * patch + s);
  return image;
}

void MaskPlan::validate(std::size_t n) const {
  if (restore_permutation.size() != n || keep_indices.size() + mask_indices.size() != n) {
    throw std::invalid_argument("mask plan does not cover " + std::to_string(n) + " patches");
  }
  std::vector<bool> seen(n, false);
  for (const auto* list : {&keep_indices, &mask_indices}) {
    for (auto i : *list) {
      if (i >= n || seen[i]) throw std::invalid_argument("mask plan indices do not partition the patches");
      seen[i] = true;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = restore_permutation[i];
    const std::size_t back = pos < keep_indices.size() ? keep_indices[pos] : mask_indices.at(pos - keep_indices.size());
    if (back != i) throw std::invalid_argument("mask plan restore permutation is not the inverse ordering");
  }
}

MaskPlan random_mask(std::size_t num_patches, double mask_ratio, std::uint64_t seed) {
  if (num_patches == 0) throw std::invalid_argument("random_mask: no patches");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("random_mask: ratio must lie in (0, 1)");
  auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(num_patches) * (1.0 - mask_ratio)));
  // Rounding up to N would leave nothing to reconstruct.
  if (num_patches >= 2) keep = std::min(keep, num_patches - 1);
  if (keep == 0) throw std::invalid_argument("random_mask: ratio leaves no visible patch");
  std::vector<std::size_t> order(num_patches);
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  MaskPlan plan;
  plan.keep_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  plan.mask_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(keep), order.end());
  std::sort(plan.keep_indices.begin(), plan.keep_indices.end());
  std::sort(plan.mask_indices.begin(), plan.mask_indices.end());
  plan.restore_permutation.resize(num_patches);
  std::size_t pos = 0;
  for (auto i : plan.keep_indices) plan.restore_permutation[i] = pos++;
  for (auto i : plan.mask_indices) plan.restore_permutation[i] = pos++;
  return plan;
}

template <typename T>
DofaModel<T>::DofaModel(const ModelConfig& cfg) : config(cfg) {
  config.validate();
  nn::Rng rng(nn::derive_seed(cfg.init_seed, {0x646f6661}));
  enc_generator = WeightGenerator<T>(
      "enc_generator", encoder_generator_config(cfg.wave_dim, cfg.num_weight_tokens, cfg.patch_size, cfg.embed_dim), rng);
  dec_generator = WeightGenerator<T>(
      "dec_generator", decoder_generator_config(cfg.wave_dim, cfg.num_weight_tokens, cfg.patch_size, cfg.decoder_dim),
      rng);
  cls_token = Parameter<T>("cls_token", nn::init_tensor<T>({1, cfg.embed_dim}, nn::Init::kTruncNormal, rng), true, false);
  mask_token =
      Parameter<T>("mask_token", nn::init_tensor<T>({1, cfg.decoder_dim}, nn::Init::kTruncNormal, rng), true, false);
  pos_embed = sincos_position_table<T>(cfg.grid(), cfg.embed_dim);
  dec_pos_embed = sincos_position_table<T>(cfg.grid(), cfg.decoder_dim);
  const nn::TransformerBlockConfig enc_cfg{cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.depth};
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    encoder_blocks.emplace_back("blocks." + std::to_string(i), enc_cfg, rng);
  }
  encoder_norm = nn::LayerNorm<T>("norm", cfg.embed_dim);
  enc_to_dec = nn::Linear<T>("decoder_embed", cfg.embed_dim, cfg.decoder_dim, rng);
  const nn::TransformerBlockConfig dec_cfg{cfg.decoder_dim, cfg.decoder_heads, cfg.mlp_ratio, cfg.decoder_depth};
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
    decoder_blocks.emplace_back("decoder_blocks." + std::to_string(i), dec_cfg, rng);
  }
  decoder_norm = nn::LayerNorm<T>("decoder_norm", cfg.decoder_dim);
  distill_proj = nn::Linear<T>("distill_proj", cfg.embed_dim, cfg.teacher_dim, rng);
}

template <typename T>
void DofaModel<T>::check_image(const Tensor<T>& image, std::size_t channels) const {
  if (image.rank() != 3 || image.dim(1) != config.image_size || image.dim(2) != config.image_size) {
    throw ShapeError("expected image [C, " + std::to_string(config.image_size) + ", " +
                     std::to_string(config.image_size) + "], got " + nn::to_string(image.shape()));
  }
  if (image.dim(0) != channels) {
    throw WavelengthError("image has " + std::to_string(image.dim(0)) + " channels but " + std::to_string(channels) +
                          " wavelengths were given");
  }
}

template <typename T>
DynamicKernel<T> DofaModel<T>::encoder_weights(const Wavelengths& lambdas) const {
  return generate_weights(lambdas, enc_generator, config.patch_size, config.embed_dim);
}

template <typename T>
DecoderHead<T> DofaModel<T>::decoder_weights(const Wavelengths& lambdas) const {
  return generate_decoder_weights(lambdas, dec_generator, config.patch_size, config.decoder_dim);
}

template <typename T>
Var<T> DofaModel<T>::embed(const Tensor<T>& image, const DynamicKernel<T>& kernel) const {
  check_image(image, kernel.kernel.dim(1));
  auto patches = nn::patch_conv2d(image, kernel.kernel, kernel.bias);
  const std::array<Var<T>, 2> parts{cls_token.var(), patches};
  return nn::add(nn::concat_rows<T>(parts), Var<T>::constant(pos_embed));
}

template <typename T>
Var<T> DofaModel<T>::embed(const Tensor<T>& image, const Wavelengths& lambdas) const {
  check_image(image, lambdas.size());
  return embed(image, encoder_weights(lambdas));
}

template <typename T>
Var<T> DofaModel<T>::encode(const Tensor<T>& image, const DynamicKernel<T>& kernel, const MaskPlan* plan) const {
  auto x = embed(image, kernel);
  if (plan) {
    plan->validate(config.num_patches());
    std::vector<std::size_t> rows{0};
    for (auto i : plan->keep_indices) rows.push_back(i + 1);
    x = nn::gather_rows<T>(x, rows);
  }
  for (const auto& block : encoder_blocks) x = block(x);
  return encoder_norm(x);
}

template <typename T>
Var<T> DofaModel<T>::encode(const Tensor<T>& image, const Wavelengths& lambdas, const MaskPlan* plan) const {
  check_image(image, lambdas.size());
  return encode(image, encoder_weights(lambdas), plan);
}

template <typename T>
Var<T> DofaModel<T>::decode(const Var<T>& latent, const MaskPlan& plan, const DecoderHead<T>& head) const {
  const std::size_t n = config.num_patches();
  plan.validate(n);
  if (latent.shape() != nn::Shape{plan.keep_indices.size() + 1, config.embed_dim}) {
    throw ShapeError("latent " + nn::to_string(latent.shape()) + " does not match a plan keeping " +
                     std::to_string(plan.keep_indices.size()) + " patches");
  }
  auto x = enc_to_dec(latent);
  const std::size_t rows = x.dim(0);
  std::vector<Var<T>> seq{nn::slice_rows(x, 1, rows)};
  if (!plan.mask_indices.empty()) {
    const std::vector<std::size_t> repeat(plan.mask_indices.size(), 0);
    seq.push_back(nn::gather_rows<T>(mask_token.var(), repeat));
  }
  auto restored = nn::gather_rows<T>(nn::concat_rows<T>(seq), plan.restore_permutation);
  const std::array<Var<T>, 2> parts{nn::slice_rows(x, 0, 1), restored};
  x = nn::add(nn::concat_rows<T>(parts), Var<T>::constant(dec_pos_embed));
  for (const auto& block : decoder_blocks) x = block(x);
  x = nn::slice_rows(decoder_norm(x), 1, n + 1);
  return nn::linear(x, head.weight, head.bias);
}

template <typename T>
Var<T> DofaModel<T>::decode(const Var<T>& latent, const MaskPlan& plan, const Wavelengths& lambdas) const {
  return decode(latent, plan, decoder_weights(lambdas));
}

template <typename T>
Var<T> DofaModel<T>::pooled_features(const Tensor<T>& image, const DynamicKernel<T>& kernel) const {
  auto tokens = encode(image, kernel, nullptr);
  return nn::mean_rows(nn::slice_rows(tokens, 1, tokens.dim(0)));
}

template <typename T>
ParameterList<T> DofaModel<T>::encoder_parameters() {
  ParameterList<T> out;
  enc_generator.collect(out);
  out.push_back(&cls_token);
  for (auto& b : encoder_blocks) b.collect(out);
  encoder_norm.collect(out);
  return out;
}

template <typename T>
ParameterList<T> DofaModel<T>::parameters() {
  ParameterList<T> out = encoder_parameters();
  dec_generator.collect(out);
  out.push_back(&mask_token);
  enc_to_dec.collect(out);
  for (auto& b : decoder_blocks) b.collect(out);
  decoder_norm.collect(out);
  distill_proj.collect(out);
  return out;
}

template <typename T>
std::size_t DofaModel<T>::parameter_count() {
  return nn::count_elements(parameters());
}

template <typename To, typename From>
DofaModel<To> convert_model(DofaModel<From>& src) {
  DofaModel<To> dst(src.config);
  nn::copy_parameter_values(src.parameters(), dst.parameters());
  return dst;
}

template Tensor<float> sincos_position_table(std::size_t, std::size_t);
template Tensor<double> sincos_position_table(std::size_t, std::size_t);
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, std::size_t, std::size_t, std::size_t, std::size_t);
template Tensor<double> unpatchify(const Tensor<double>&, std::size_t, std::size_t, std::size_t, std::size_t);
template class DofaModel<float>;
template class DofaModel<double>;
template DofaModel<double> convert_model(DofaModel<float>&);
template DofaModel<float> convert_model(DofaModel<double>&);
template DofaModel<float> convert_model(DofaModel<float>&);

}  // namespace dofa
