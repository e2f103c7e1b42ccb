// SPDX-License-Identifier: Apache-2.0

#include "dofa/losses.hpp"

#include <stdexcept>

namespace dofa {

using nn::ShapeError;

TeacherConfig TeacherConfig::matching(const ModelConfig& cfg, std::uint64_t seed) {
  TeacherConfig t;
  t.patch_size = cfg.patch_size;
  t.image_size = cfg.image_size;
  t.embed_dim = cfg.teacher_dim;
  t.depth = cfg.teacher_depth;
  t.num_heads = cfg.teacher_heads;
  t.mlp_ratio = cfg.mlp_ratio;
  t.init_seed = seed;
  return t;
}

template <typename T>
TeacherModel<T>::TeacherModel(const TeacherConfig& cfg) : config(cfg) {
  if (cfg.patch_size == 0 || cfg.image_size % cfg.patch_size != 0) {
    throw std::invalid_argument("teacher image size must be a multiple of the patch size");
  }
  nn::Rng rng(nn::derive_seed(cfg.init_seed, {0x7465616368}));
  const std::size_t p = cfg.patch_size;
  const std::size_t grid = cfg.image_size / p;
  patch_kernel = Parameter<T>(
      "patch_embed.weight",
      nn::init_tensor<T>({cfg.embed_dim, 3, p, p}, nn::Init::kXavierUniform, rng, 3 * p * p, cfg.embed_dim), false);
  patch_bias = Parameter<T>("patch_embed.bias", Tensor<T>({cfg.embed_dim}), false, false);
  cls_token =
      Parameter<T>("cls_token", nn::init_tensor<T>({1, cfg.embed_dim}, nn::Init::kTruncNormal, rng), false, false);
  pos_embed = sincos_position_table<T>(grid, cfg.embed_dim);
  const nn::TransformerBlockConfig block_cfg{cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.depth};
  for (std::size_t i = 0; i < cfg.depth; ++i) blocks.emplace_back("blocks." + std::to_string(i), block_cfg, rng);
  norm = nn::LayerNorm<T>("norm", cfg.embed_dim);
  // Block parameters are created trainable by the layer constructors; freeze them.
  for (auto* param : parameters()) {
    if (param->trainable()) {
      *param = Parameter<T>(param->name(), Tensor<T>(param->value()), false, param->decay());
    }
  }
}

template <typename T>
Tensor<T> TeacherModel<T>::features(const Tensor<T>& rgb) const {
  if (rgb.rank() != 3 || rgb.dim(0) != 3 || rgb.dim(1) != config.image_size || rgb.dim(2) != config.image_size) {
    throw ShapeError("teacher expects [3, " + std::to_string(config.image_size) + ", " +
                     std::to_string(config.image_size) + "], got " + nn::to_string(rgb.shape()));
  }
  nn::NoGradGuard no_grad;
  auto patches = nn::patch_conv2d(rgb, patch_kernel.var(), patch_bias.var());
  const std::array<Var<T>, 2> parts{cls_token.var(), patches};
  auto x = nn::add(nn::concat_rows<T>(parts), Var<T>::constant(pos_embed));
  for (const auto& block : blocks) x = block(x);
  x = norm(x);
  return nn::mean_rows(nn::slice_rows(x, 1, x.dim(0))).value();
}

template <typename T>
nn::ParameterList<T> TeacherModel<T>::parameters() {
  nn::ParameterList<T> out{&patch_kernel, &patch_bias, &cls_token};
  for (auto& b : blocks) b.collect(out);
  norm.collect(out);
  return out;
}

std::array<std::size_t, 3> proxy_channels(const ProxyRule& rule, std::size_t channels, std::uint64_t seed) {
  if (rule.is_sar) {
    nn::Rng rng(seed);
    const auto channel = static_cast<std::size_t>(rng.index(channels));
    return {channel, channel, channel};
  }
  if (!rule.rgb_indices) {
    throw std::invalid_argument("cannot build an RGB proxy: modality declares neither RGB bands nor SAR");
  }
  for (auto i : *rule.rgb_indices) {
    if (i >= channels) {
      throw std::invalid_argument("RGB index " + std::to_string(i) + " outside " + std::to_string(channels) + " channels");
    }
  }
  return *rule.rgb_indices;
}

template <typename T>
Tensor<T> make_proxy(const Tensor<T>& image, const ProxyRule& rule, std::uint64_t seed) {
  if (image.rank() != 3) throw ShapeError("make_proxy expects [C, H, W]");
  const std::size_t plane = image.dim(1) * image.dim(2);
  const auto pick = proxy_channels(rule, image.dim(0), seed);
  Tensor<T> out({3, image.dim(1), image.dim(2)});
  for (std::size_t k = 0; k < 3; ++k) {
    std::copy_n(&image[pick[k] * plane], plane, &out[k * plane]);
  }
  return out;
}

template <typename T>
Var<T> reconstruction_loss(const Var<T>& pred, const Tensor<T>& target_patches, const MaskPlan& plan,
                           bool all_patches) {
  require_same_shape(pred.value(), target_patches, "reconstruction_loss");
  plan.validate(target_patches.dim(0));
  auto target = Var<T>::constant(target_patches);
  if (all_patches) return nn::mse(pred, target);
  if (plan.mask_indices.empty()) throw std::invalid_argument("reconstruction_loss: mask plan hides no patch");
  return nn::mse(nn::gather_rows<T>(pred, plan.mask_indices), nn::gather_rows<T>(target, plan.mask_indices));
}

template <typename T>
Var<T> distillation_loss(const Var<T>& student, const Tensor<T>& teacher, const nn::Linear<T>& proj) {
  if (student.shape().size() != 1) throw ShapeError("student feature must be a vector");
  auto projected = nn::reshape(proj(nn::reshape(student, {1, student.dim(0)})), {proj.weight.shape()[1]});
  auto cos = nn::cosine_similarity(projected, Var<T>::constant(teacher), static_cast<T>(kCosineEps));
  return nn::scale(cos, T{-1});
}

template <typename T>
BatchWeights<T> prepare_batch_weights(const DofaModel<T>& model, const Wavelengths& lambdas) {
  return BatchWeights<T>{model.encoder_weights(lambdas), model.decoder_weights(lambdas),
                         model.encoder_weights(rgb_wavelengths())};
}

template <typename T>
CompositeLoss<T> composite_loss(const Tensor<T>& image, const Tensor<T>& proxy, const Tensor<T>& teacher_features,
                                const MaskPlan& plan, const DofaModel<T>& model, const BatchWeights<T>& weights) {
  auto latent = model.encode(image, weights.encoder, &plan);
  auto pred = model.decode(latent, plan, weights.decoder);
  auto recon = reconstruction_loss(pred, patchify(image, model.config.patch_size), plan,
                                   model.config.recon_on_all_patches);
  auto student = model.pooled_features(proxy, weights.proxy);
  auto distill = distillation_loss(student, teacher_features, model.distill_proj);
  CompositeLoss<T> out;
  out.total = nn::add(recon, distill);
  out.breakdown.recon_mse = static_cast<double>(recon.value().item());
  out.breakdown.distill_cos = -static_cast<double>(distill.value().item());
  out.breakdown.total = static_cast<double>(out.total.value().item());
  return out;
}

template <typename T>
CompositeLoss<T> composite_loss(const Tensor<T>& image, const Wavelengths& lambdas, const ProxyRule& rule,
                                const DofaModel<T>& model, const TeacherModel<T>& teacher, std::uint64_t seed) {
  const auto plan = random_mask(model.config.num_patches(), model.config.mask_ratio, nn::derive_seed(seed, {1}));
  const auto proxy = make_proxy(image, rule, nn::derive_seed(seed, {2}));
  const auto weights = prepare_batch_weights(model, lambdas);
  return composite_loss(image, proxy, teacher.features(proxy), plan, model, weights);
}

template <typename T>
Var<T> generator_init_loss(const WeightGenerator<T>& gen, const Tensor<T>& teacher_kernel,
                           const Tensor<T>& teacher_bias, const Wavelengths& rgb) {
  if (teacher_kernel.rank() != 4 || teacher_kernel.dim(1) != rgb.size() || teacher_bias.rank() != 1 ||
      teacher_bias.dim(0) != teacher_kernel.dim(0)) {
    throw ShapeError("teacher kernel " + nn::to_string(teacher_kernel.shape()) + " / bias " +
                     nn::to_string(teacher_bias.shape()) + " incompatible with " + std::to_string(rgb.size()) +
                     " wavelengths");
  }
  const std::size_t d = teacher_kernel.dim(0);
  const std::size_t p = teacher_kernel.dim(2);
  if (gen.config.weight_block != p * p * d || gen.config.bias_dim != d) {
    throw ShapeError("generator width does not match teacher width " + std::to_string(d));
  }
  auto generated = generate_weights(rgb, gen, p, d);
  return nn::add(nn::mse(generated.kernel, Var<T>::constant(teacher_kernel)),
                 nn::mse(generated.bias, Var<T>::constant(teacher_bias)));
}

#define DOFA_INSTANTIATE_LOSSES(T)                                                                              \
  template class TeacherModel<T>;                                                                               \
  template Tensor<T> make_proxy(const Tensor<T>&, const ProxyRule&, std::uint64_t);                             \
  template Var<T> reconstruction_loss(const Var<T>&, const Tensor<T>&, const MaskPlan&, bool);                  \
  template Var<T> distillation_loss(const Var<T>&, const Tensor<T>&, const nn::Linear<T>&);                     \
  template BatchWeights<T> prepare_batch_weights(const DofaModel<T>&, const Wavelengths&);                      \
  template CompositeLoss<T> composite_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                           const MaskPlan&, const DofaModel<T>&, const BatchWeights<T>&);       \
  template CompositeLoss<T> composite_loss(const Tensor<T>&, const Wavelengths&, const ProxyRule&,              \
                                           const DofaModel<T>&, const TeacherModel<T>&, std::uint64_t);         \
  template Var<T> generator_init_loss(const WeightGenerator<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                      const Wavelengths&);

DOFA_INSTANTIATE_LOSSES(float)
DOFA_INSTANTIATE_LOSSES(double)

#undef DOFA_INSTANTIATE_LOSSES

}  // namespace dofa
