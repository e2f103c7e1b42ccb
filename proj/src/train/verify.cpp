// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dofa/data/raster.hpp"
#include "dofa/data/synth.hpp"
#include "dofa/losses.hpp"
#include "dofa/train/checkpoint.hpp"

namespace dofa::train {

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <typename T>
Tensor<T> random_image(std::size_t c, std::size_t size, nn::Rng& rng) {
  Tensor<T> img({c, size, size});
  for (auto& v : img.data()) v = static_cast<T>(rng.normal());
  return img;
}

Wavelengths random_lambdas(std::size_t c, nn::Rng& rng) {
  std::vector<double> l(c);
  for (auto& v : l) v = rng.uniform(0.4, 2.5);
  return Wavelengths(std::move(l));
}

VerifyCheck check_composite_gradients(const VerifyOptions& opts) {
  VerifyCheck out;
  const auto cfg = grad_check_config();
  DofaModel<double> model(cfg);
  const TeacherModel<double> teacher(TeacherConfig::matching(cfg, 7));
  nn::Rng rng(11);
  const auto image = random_image<double>(2, cfg.image_size, rng);
  const Wavelengths sar{kSarWavelength, kSarWavelength};
  const ProxyRule rule{std::nullopt, true};
  nn::GradCheckOptions gopts;
  // The loss is a long double-precision reduction; at smaller steps its
  // rounding noise, not the gradient, dominates the comparison.
  gopts.step = 1e-4;
  gopts.samples_per_tensor = opts.full ? 8 : 3;
  gopts.corrupt_gradients = opts.corrupt_gradients;
  const auto report = nn::grad_check(
      [&] { return composite_loss(image, sar, rule, model, teacher, 5).total; }, model.parameters(), gopts);
  out.passed = report.max_relative_error < 1e-4;
  out.detail = fmt("max rel err %.3g", report.max_relative_error) + " at " + report.worst_parameter + "[" +
               std::to_string(report.worst_index) + "] (" + fmt("%.6g", report.worst_analytic) + " vs " +
               fmt("%.6g", report.worst_numeric) + "), " + std::to_string(report.elements_checked) + " elements";
  return out;
}

VerifyCheck check_permutation() {
  VerifyCheck out;
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  cfg.decoder_dim = 32;
  cfg.wave_dim = 64;
  cfg.num_weight_tokens = 8;
  DofaModel<double> model(cfg);
  nn::Rng rng(3);
  double worst_kernel = 0.0, worst_tokens = 0.0;
  int trials = 0;
  for (std::size_t c : {2, 3, 4, 9}) {
    const auto lambdas = random_lambdas(c, rng);
    const auto image = random_image<double>(c, cfg.image_size, rng);
    const auto base = model.encoder_weights(lambdas);
    const auto tokens = model.encode(image, base, nullptr).value();
    for (int t = 0; t < 5; ++t, ++trials) {
      std::vector<std::size_t> order(c);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order.begin(), order.end());
      const auto permuted_lambdas = lambdas.permuted(order);
      const auto k = model.encoder_weights(permuted_lambdas);
      const auto& kp = k.kernel.value();
      const auto& kb = base.kernel.value();
      const std::size_t d = kb.dim(0), pp = kb.dim(2) * kb.dim(3);
      for (std::size_t o = 0; o < d; ++o)
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t e = 0; e < pp; ++e)
            worst_kernel = std::max(worst_kernel, std::abs(kp[(o * c + i) * pp + e] - kb[(o * c + order[i]) * pp + e]));
      Tensor<double> permuted_image({c, cfg.image_size, cfg.image_size});
      const std::size_t plane = cfg.image_size * cfg.image_size;
      for (std::size_t i = 0; i < c; ++i) std::copy_n(&image[order[i] * plane], plane, &permuted_image[i * plane]);
      worst_tokens = std::max(worst_tokens, nn::max_abs_diff(model.encode(permuted_image, k, nullptr).value(), tokens));
    }
  }
  out.passed = worst_kernel < 1e-5 && worst_tokens < 1e-5;
  out.detail = std::to_string(trials) + " permutations, kernel " + fmt("%.2g", worst_kernel) + ", tokens " +
               fmt("%.2g", worst_tokens);
  return out;
}

VerifyCheck check_masking() {
  VerifyCheck out;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto plan = random_mask(196, 0.75, seed);
    plan.validate(196);
    ok = ok && plan.keep_indices.size() == 49 && plan.mask_indices.size() == 147;
    std::vector<std::size_t> joined = plan.keep_indices;
    joined.insert(joined.end(), plan.mask_indices.begin(), plan.mask_indices.end());
    for (std::size_t i = 0; i < 196; ++i) ok = ok && joined[plan.restore_permutation[i]] == i;
  }
  out.passed = ok;
  out.detail = "49 kept / 147 masked, inverse exact over 10 seeds";
  return out;
}

VerifyCheck check_raster_format() {
  VerifyCheck out;
  nn::Rng rng(5);
  const auto& spec = data::find_modality("sentinel2");
  const auto img = data::synth_sample(spec, 32, 32, 3, 10, rng);
  const auto bytes = data::encode_raster(img);
  const auto back = data::decode_raster(bytes);
  bool ok = back.data == img.data && back.wavelengths == img.wavelengths && back.label == img.label;

  using K = data::RasterError::Kind;
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      data::decode_raster(b);
    } catch (const data::RasterError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  auto dtype = bytes;
  dtype[6] = 3;
  ok = ok && kind_of(bad_magic) == static_cast<int>(K::kBadMagic) &&
       kind_of(truncated) == static_cast<int>(K::kTruncatedPayload) &&
       kind_of(flipped) == static_cast<int>(K::kBadCrc) && kind_of(dtype) == static_cast<int>(K::kUnknownDtype);
  out.passed = ok;
  out.detail = std::to_string(bytes.size()) + " bytes; magic/truncation/CRC/dtype distinguished";
  return out;
}

VerifyCheck check_checkpoint_format() {
  VerifyCheck out;
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  cfg.decoder_dim = 32;
  cfg.wave_dim = 64;
  cfg.num_weight_tokens = 8;
  DofaModel<float> model(cfg);
  auto ckpt = model_checkpoint(model);
  ckpt.state.step = 12;
  ckpt.state.history.push_back({0, 0.1, 1.5, -0.25, 1.25});
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  auto reloaded = load_model(back);
  nn::Rng rng(9);
  const auto image = random_image<float>(4, cfg.image_size, rng);
  const Wavelengths l{0.49, 0.56, 0.665, 0.842};
  const auto a = model.encode(image, l).value();
  const auto b = reloaded.encode(image, l).value();
  bool ok = back == ckpt && a == b;

  using K = CheckpointError::Kind;
  auto kind_of = [](std::vector<std::uint8_t> v) {
    try {
      decode_checkpoint(v);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  auto flipped = bytes;
  flipped[bytes.size() - 40] ^= 0x10;
  ok = ok && kind_of(bad_magic) == static_cast<int>(K::kBadMagic) &&
       kind_of(truncated) == static_cast<int>(K::kTruncated) && kind_of(flipped) == static_cast<int>(K::kBadCrc);
  out.passed = ok;
  out.detail = std::to_string(bytes.size()) + " bytes; forward outputs identical after reload";
  return out;
}

VerifyCheck check_loss_anchors() {
  VerifyCheck out;
  const Tensor<double> x({2}, std::vector<double>{1.0, 0.0});
  const Tensor<double> y({2}, std::vector<double>{0.0, 1.0});
  Tensor<double> neg_x = x;
  for (auto& v : neg_x.data()) v = -v;
  auto neg_cos = [](const Tensor<double>& a, const Tensor<double>& b) {
    return -nn::cosine_similarity(Var<double>::constant(a), Var<double>::constant(b), kCosineEps).value().item();
  };
  const double same = neg_cos(x, x), orth = neg_cos(x, y), anti = neg_cos(x, neg_x);
  const auto plan = random_mask(4, 0.75, 1);
  Tensor<double> target({4, 6});
  nn::Rng rng(2);
  for (auto& v : target.data()) v = rng.normal();
  Tensor<double> shifted = target;
  for (auto& v : shifted.data()) v += 1.0;
  const double zero = reconstruction_loss(Var<double>::constant(target), target, plan).value().item();
  const double one = reconstruction_loss(Var<double>::constant(shifted), target, plan).value().item();
  out.passed = std::abs(same + 1) < 1e-12 && std::abs(orth) < 1e-12 && std::abs(anti - 1) < 1e-12 && zero == 0.0 &&
               std::abs(one - 1.0) < 1e-12;
  out.detail = fmt("%.3g", same) + " / " + fmt("%.3g", orth) + " / " + fmt("%.3g", anti) + ", MSE " +
               fmt("%.3g", zero) + " / " + fmt("%.3g", one);
  return out;
}

VerifyCheck check_wide_inputs() {
  VerifyCheck out;
  ModelConfig cfg;
  DofaModel<float> model(cfg);
  const auto count = model.parameter_count();
  nn::Rng rng(4);
  bool ok = true;
  std::string dims;
  for (std::size_t c : {1, 2, 3, 4, 9, 202}) {
    const auto lambdas = random_lambdas(c, rng);
    const auto image = random_image<float>(c, cfg.image_size, rng);
    const auto k = model.encoder_weights(lambdas);
    const auto plan = random_mask(cfg.num_patches(), cfg.mask_ratio, c);
    const auto latent = model.encode(image, k, &plan);
    const auto pred = model.decode(latent, plan, lambdas);
    ok = ok && k.kernel.shape() == nn::Shape{cfg.embed_dim, c, cfg.patch_size, cfg.patch_size} &&
         latent.shape() == nn::Shape{plan.keep_indices.size() + 1, cfg.embed_dim} &&
         pred.shape() == nn::Shape{cfg.num_patches(), c * cfg.patch_size * cfg.patch_size} &&
         model.parameter_count() == count;
    dims += (dims.empty() ? "C=" : ",") + std::to_string(c);
  }
  out.passed = ok;
  out.detail = dims + "; " + std::to_string(count) + " parameters";
  return out;
}

}  // namespace

ModelConfig grad_check_config() {
  ModelConfig cfg;
  cfg.embed_dim = 64;
  cfg.depth = 2;
  cfg.num_heads = 4;
  cfg.decoder_dim = 32;
  cfg.decoder_depth = 1;
  cfg.decoder_heads = 4;
  cfg.wave_dim = 32;
  cfg.num_weight_tokens = 4;
  cfg.teacher_dim = 32;
  cfg.teacher_depth = 1;
  cfg.teacher_heads = 4;
  cfg.image_size = 32;
  cfg.patch_size = 16;
  cfg.init_seed = 17;
  return cfg;
}

std::vector<VerifyCheck> run_verify(const VerifyOptions& opts) {
  using Entry = std::pair<std::string, std::function<VerifyCheck()>>;
  std::vector<Entry> checks{
      {"grad_check composite loss (64-bit, C=2)", [&] { return check_composite_gradients(opts); }},
      {"permutation equivariance / invariance", check_permutation},
      {"mask accounting (N=196, ratio 0.75)", check_masking},
      {"raster round trip and corruption errors", check_raster_format},
      {"checkpoint round trip and corruption errors", check_checkpoint_format},
      {"loss anchors (cosine -1/0/+1, MSE 0/1)", check_loss_anchors},
  };
  if (opts.full) checks.emplace_back("202-channel shapes and parameter count", check_wide_inputs);

  std::vector<VerifyCheck> out;
  for (const auto& [name, check] : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    VerifyCheck result;
    try {
      result = check();
    } catch (const std::exception& e) {
      result.passed = false;
      result.detail = std::string("threw: ") + e.what();
    }
    result.name = name;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(result));
  }
  return out;
}

}  // namespace dofa::train
