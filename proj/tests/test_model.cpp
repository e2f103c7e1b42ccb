// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "dofa/data/modality.hpp"
#include "dofa/losses.hpp"
#include "dofa/nn/grad_check.hpp"
#include "support.hpp"

using namespace dofa;
using nn::Rng;
using nn::Shape;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

Wavelengths random_lambdas(std::size_t c, Rng& rng) {
  std::vector<double> l(c);
  for (auto& v : l) v = rng.uniform(0.4, 2.5);
  return Wavelengths(std::move(l));
}

std::vector<std::size_t> random_order(std::size_t c, Rng& rng) {
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  return order;
}

template <typename T>
Tensor<T> permute_channels(const Tensor<T>& image, const std::vector<std::size_t>& order) {
  Tensor<T> out(image.shape());
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t i = 0; i < order.size(); ++i) std::copy_n(&image[order[i] * plane], plane, &out[i * plane]);
  return out;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  cfg.decoder_dim = 32;
  cfg.wave_dim = 32;
  cfg.num_weight_tokens = 4;
  cfg.teacher_dim = 32;
  cfg.teacher_depth = 1;
  return cfg;
}

}  // namespace

TEST_CASE("wavelength list validation") {
  CHECK_THROWS_AS(Wavelengths({0.5, 0.0}), WavelengthError);
  CHECK_THROWS_AS(Wavelengths({-1.0}), WavelengthError);
  CHECK_THROWS_AS(Wavelengths(std::vector<double>{}), WavelengthError);
  CHECK_THROWS_AS(Wavelengths({std::nan("")}), WavelengthError);
  const Wavelengths l{0.4, 0.5, 0.6};
  const std::vector<std::size_t> order{2, 0, 1};
  CHECK(l.permuted(order) == Wavelengths{0.6, 0.4, 0.5});
}

TEST_CASE("encode_wavelengths") {
  SUBCASE("lambda 0: sines vanish, cosines are one") {
    const std::vector<double> zero{0.0};
    const auto e = encode_wavelengths<double>(zero, 16);
    for (std::size_t k = 0; k < 16; ++k) CHECK(e[k] == (k % 2 == 0 ? 0.0 : 1.0));
  }
  SUBCASE("lambda 3.75 first column") {
    const std::vector<double> l{3.75};
    // sin(3.75) to 12 digits
    CHECK(encode_wavelengths<double>(l, 128)[0] == doctest::Approx(-0.571561318742).epsilon(1e-11));
  }
  SUBCASE("duplicates give identical rows, values bounded") {
    const std::vector<double> l{3.75, 3.75, 0.49, 2.19};
    const auto e = encode_wavelengths<double>(l, 128);
    CHECK(std::equal(&e[0], &e[128], &e[128]));
    for (double v : e.data()) CHECK(std::abs(v) <= 1.0);
  }
  CHECK_THROWS_AS(encode_wavelengths<double>(std::vector<double>{1.0}, 7), nn::ShapeError);
}

TEST_CASE("generate_weights shapes and determinism") {
  Rng rng(1);
  WeightGenerator<float> gen("g", encoder_generator_config(128, 16, 16, 64), rng);
  const auto rgb = generate_weights(Wavelengths{0.64, 0.56, 0.48}, gen, 16, 64);
  CHECK(rgb.kernel.shape() == Shape{64, 3, 16, 16});
  CHECK(rgb.bias.shape() == Shape{64});
  const auto again = generate_weights(Wavelengths{0.64, 0.56, 0.48}, gen, 16, 64);
  CHECK(rgb.kernel.value() == again.kernel.value());
  CHECK(rgb.bias.value() == again.bias.value());

  std::vector<double> wide(202);
  for (std::size_t i = 0; i < wide.size(); ++i) wide[i] = 0.42 + 0.01 * static_cast<double>(i);
  CHECK(generate_weights(Wavelengths(wide), gen, 16, 64).kernel.shape() == Shape{64, 202, 16, 16});
  CHECK_THROWS_AS(generate_weights(Wavelengths{0.5}, gen, 16, 32), nn::ShapeError);
}

TEST_CASE("generate_weights is permutation equivariant") {
  Rng rng(2);
  WeightGenerator<double> gen("g", encoder_generator_config(32, 4, 4, 16), rng);
  for (std::size_t c : {2, 5, 9}) {
    const auto l = random_lambdas(c, rng);
    const auto base = generate_weights(l, gen, 4, 16);
    for (int t = 0; t < 4; ++t) {
      const auto order = random_order(c, rng);
      const auto perm = generate_weights(l.permuted(order), gen, 4, 16);
      double worst = 0.0;
      for (std::size_t d = 0; d < 16; ++d)
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t e = 0; e < 16; ++e)
            worst = std::max(worst, std::abs(perm.kernel.value()[(d * c + i) * 16 + e] -
                                             base.kernel.value()[(d * c + order[i]) * 16 + e]));
      CHECK(worst < 1e-5);
      CHECK(nn::max_abs_diff(perm.bias.value(), base.bias.value()) < 1e-5);
    }
  }
}

TEST_CASE("decoder head generation") {
  Rng rng(3);
  WeightGenerator<double> gen("d", decoder_generator_config(32, 4, 16, 48), rng);
  const auto s1 = generate_decoder_weights(Wavelengths{3.75, 3.75}, gen, 16, 48);
  CHECK(s1.weight.shape() == Shape{48, 512});
  CHECK(s1.bias.shape() == Shape{512});
  const auto one = generate_decoder_weights(Wavelengths{0.5}, gen, 16, 48);
  CHECK(one.weight.shape() == Shape{48, 256});

  // Permuting wavelengths permutes the per-channel column blocks.
  WeightGenerator<double> small("d", decoder_generator_config(32, 4, 2, 8), rng);
  const Wavelengths l{0.5, 1.1, 2.0};
  const std::vector<std::size_t> order{1, 2, 0};
  const auto a = generate_decoder_weights(l, small, 2, 8);
  const auto b = generate_decoder_weights(l.permuted(order), small, 2, 8);
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t e = 0; e < 4; ++e) {
      worst = std::max(worst, std::abs(b.bias.value()[i * 4 + e] - a.bias.value()[order[i] * 4 + e]));
      for (std::size_t d = 0; d < 8; ++d)
        worst = std::max(worst, std::abs(b.weight.value().at(d, i * 4 + e) - a.weight.value().at(d, order[i] * 4 + e)));
    }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradients reach the generator through the kernel") {
  Rng rng(4);
  WeightGenerator<double> gen("g", encoder_generator_config(16, 2, 2, 8), rng);
  const Wavelengths l{0.6, 1.6};
  const auto probe = randn<double>({8, 2, 2, 2}, rng);
  nn::GradCheckOptions opts;
  opts.samples_per_tensor = 4;
  const auto report = nn::grad_check(
      [&] {
        auto k = generate_weights(l, gen, 2, 8);
        return nn::add(nn::sum(nn::mul(k.kernel, Var<double>::constant(probe))), nn::sum(k.bias));
      },
      gen.parameters(), opts);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("patchify layout and round trip") {
  Rng rng(5);
  const auto img = randn<float>({2, 32, 32}, rng);
  const auto p = patchify(img, 16);
  CHECK(p.shape() == Shape{4, 512});
  // Patch 1 is grid cell (0, 1); element c*P^2 + r*P + s.
  CHECK(p.at(1, 256 + 3 * 16 + 5) == img[(1 * 32 + 3) * 32 + 16 + 5]);
  CHECK(p.at(2, 7) == img[(16 + 0) * 32 + 7]);
  CHECK(unpatchify(p, 2, 32, 32, 16) == img);
  CHECK(patchify(Tensor<float>({3, 224, 224}), 16).dim(0) == 196);
  CHECK_THROWS_AS(patchify(Tensor<float>({1, 30, 30}), 16), nn::ShapeError);
}

TEST_CASE("random_mask accounting") {
  const auto plan = random_mask(196, 0.75, 1);
  CHECK(plan.keep_indices.size() == 49);
  CHECK(plan.mask_indices.size() == 147);
  CHECK(std::is_sorted(plan.keep_indices.begin(), plan.keep_indices.end()));
  std::vector<std::size_t> joined = plan.keep_indices;
  joined.insert(joined.end(), plan.mask_indices.begin(), plan.mask_indices.end());
  for (std::size_t i = 0; i < 196; ++i) CHECK(joined[plan.restore_permutation[i]] == i);
  CHECK(random_mask(196, 0.75, 1).keep_indices == plan.keep_indices);
  CHECK(random_mask(196, 0.75, 2).keep_indices != plan.keep_indices);
  // A ratio in (0, 1) that keeps anything still hides at least one patch.
  for (double r : {0.01, 0.2, 0.5, 0.7}) {
    const auto two = random_mask(2, r, 0);
    CHECK(two.keep_indices.size() == 1);
    CHECK(two.mask_indices.size() == 1);
  }
  CHECK(random_mask(196, 0.001, 0).mask_indices.size() == 1);
  CHECK_THROWS(random_mask(4, 0.95, 0));
  CHECK_THROWS(random_mask(4, 1.0, 0));
  CHECK_THROWS(random_mask(0, 0.5, 0));
}

TEST_CASE("position table") {
  const auto t = sincos_position_table<double>(2, 8);
  CHECK(t.shape() == Shape{5, 8});
  for (std::size_t j = 0; j < 8; ++j) CHECK(t.at(0, j) == 0.0);
  // patch 1 = (row 0, col 1): column half carries sin(1), row half sin(0).
  CHECK(t.at(2, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(t.at(2, 4) == 0.0);
}

TEST_CASE("embed: channel-count universality and conv/matrix agreement") {
  auto cfg = small_config();
  DofaModel<double> model(cfg);
  const auto count = model.parameter_count();
  Rng rng(6);
  for (std::size_t c : {2, 3, 4, 9, 202}) {
    const auto l = random_lambdas(c, rng);
    const auto img = randn<double>({c, 32, 32}, rng);
    const auto k = model.encoder_weights(l);
    const auto tokens = model.embed(img, k).value();
    REQUIRE(tokens.shape() == Shape{5, cfg.embed_dim});

    // Matrix path: W[c*P^2 + e, d] = kernel[d, c, e].
    const std::size_t pp = 256;
    ref::Mat w(c * pp, cfg.embed_dim);
    for (std::size_t d = 0; d < cfg.embed_dim; ++d)
      for (std::size_t i = 0; i < c * pp; ++i) w(i, d) = k.kernel.value()[d * c * pp + i];
    const auto proj = ref::matmul(ref::from(patchify(img, 16)), w);
    double worst = 0.0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
        const double expect = proj(n, d) + k.bias.value()[d] + model.pos_embed.at(n + 1, d);
        worst = std::max(worst, std::abs(expect - tokens.at(n + 1, d)));
      }
    CHECK(worst < 1e-5);
    for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
      CHECK(tokens.at(0, d) == model.cls_token.value()[d] + model.pos_embed.at(0, d));
    }
  }
  CHECK(model.parameter_count() == count);
  CHECK_THROWS_AS(model.embed(Tensor<double>({3, 32, 32}), Wavelengths{0.5, 0.6}), WavelengthError);
}

TEST_CASE("encode and decode shapes") {
  auto cfg = small_config();
  DofaModel<float> model(cfg);
  Rng rng(7);
  const auto l = random_lambdas(9, rng);
  const auto img = randn<float>({9, 32, 32}, rng);
  CHECK(model.encode(img, l).shape() == Shape{5, 32});
  const auto plan = random_mask(4, 0.75, 3);
  REQUIRE(plan.keep_indices.size() == 1);
  const auto latent = model.encode(img, l, &plan);
  CHECK(latent.shape() == Shape{2, 32});
  CHECK(model.decode(latent, plan, l).shape() == Shape{4, 9 * 256});

  DecoderHead<float> zero{Var<float>::constant(Tensor<float>({32, 9 * 256})),
                          Var<float>::constant(Tensor<float>({9 * 256}))};
  const auto zeros = model.decode(latent, plan, zero).value();
  for (float v : zeros.data()) CHECK(v == 0.0f);

  const auto bad = random_mask(9, 0.5, 1);
  CHECK_THROWS(model.decode(latent, bad, l));
}

TEST_CASE("encode invariance under joint channel permutation") {
  auto cfg = small_config();
  DofaModel<double> model(cfg);
  Rng rng(8);
  int trials = 0;
  for (std::size_t c : {2, 3, 4, 9}) {
    const auto l = random_lambdas(c, rng);
    const auto img = randn<double>({c, 32, 32}, rng);
    const auto base = model.encode(img, l).value();
    for (int t = 0; t < 5; ++t, ++trials) {
      const auto order = random_order(c, rng);
      CHECK(nn::max_abs_diff(model.encode(permute_channels(img, order), l.permuted(order)).value(), base) < 1e-5);
    }
  }
  CHECK(trials >= 20);
}

TEST_CASE("float and double models share initial values") {
  auto cfg = small_config();
  DofaModel<float> f(cfg);
  auto d = convert_model<double>(f);
  Rng rng(9);
  const auto img = randn<double>({4, 32, 32}, rng);
  const Wavelengths l{0.49, 0.56, 0.665, 0.842};
  CHECK(nn::max_abs_diff(d.encode(img, l).value().cast<float>(), f.encode(img.cast<float>(), l).value()) < 1e-4);
}

TEST_CASE("make_proxy") {
  Rng rng(10);
  const auto& s2 = data::find_modality("sentinel2");
  const auto img = randn<float>({9, 4, 4}, rng);
  const auto proxy = make_proxy(img, s2.proxy_rule(), 0);
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t src = (*s2.rgb_indices)[k];
    CHECK(std::equal(&proxy[k * 16], &proxy[k * 16] + 16, &img[src * 16]));
  }
  // The declared red band is the one nearest 0.64 um.
  CHECK(s2.wavelengths[(*s2.rgb_indices)[0]] == doctest::Approx(0.665).epsilon(1e-6));

  const auto& s1 = data::find_modality("sentinel1");
  const auto sar = randn<float>({2, 4, 4}, rng);
  std::set<std::size_t> picked;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const auto p = make_proxy(sar, s1.proxy_rule(), seed);
    const std::size_t src = p[0] == sar[0] ? 0 : 1;
    picked.insert(src);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::equal(&p[k * 16], &p[k * 16] + 16, &sar[src * 16]));
  }
  CHECK(picked.size() == 2);

  const auto& naip = data::find_modality("naip");
  const auto rgb = randn<float>({3, 4, 4}, rng);
  CHECK(make_proxy(rgb, naip.proxy_rule(), 0) == rgb);
  CHECK_THROWS_AS(make_proxy(randn<float>({2, 4, 4}, rng), ProxyRule{}, 0), std::invalid_argument);
}

TEST_CASE("reconstruction loss") {
  Rng rng(11);
  const auto target = randn<double>({4, 6}, rng);
  const auto plan = random_mask(4, 0.5, 2);
  Tensor<double> shifted = target;
  for (auto& v : shifted.data()) v += 1.0;
  CHECK(reconstruction_loss(Var<double>::constant(target), target, plan).value().item() == 0.0);
  CHECK(reconstruction_loss(Var<double>::constant(shifted), target, plan).value().item() == doctest::Approx(1.0));

  const auto pred = randn<double>({4, 6}, rng);
  double s = 0.0;
  for (auto i : plan.mask_indices)
    for (std::size_t j = 0; j < 6; ++j) s += (pred.at(i, j) - target.at(i, j)) * (pred.at(i, j) - target.at(i, j));
  const double masked = reconstruction_loss(Var<double>::constant(pred), target, plan).value().item();
  CHECK(masked == doctest::Approx(s / (6.0 * plan.mask_indices.size())).epsilon(1e-12));

  double all = 0.0;
  for (std::size_t i = 0; i < 24; ++i) all += (pred[i] - target[i]) * (pred[i] - target[i]);
  CHECK(reconstruction_loss(Var<double>::constant(pred), target, plan, true).value().item() ==
        doctest::Approx(all / 24.0).epsilon(1e-12));

  // Order of masked indices inside the plan does not matter.
  MaskPlan reordered = plan;
  std::reverse(reordered.mask_indices.begin(), reordered.mask_indices.end());
  std::vector<std::size_t> joined = reordered.keep_indices;
  joined.insert(joined.end(), reordered.mask_indices.begin(), reordered.mask_indices.end());
  for (std::size_t pos = 0; pos < joined.size(); ++pos) reordered.restore_permutation[joined[pos]] = pos;
  CHECK(reconstruction_loss(Var<double>::constant(pred), target, reordered).value().item() ==
        doctest::Approx(masked).epsilon(1e-14));

  CHECK_THROWS_AS(reconstruction_loss(Var<double>::constant(pred), randn<double>({4, 5}, rng), plan), nn::ShapeError);
}

TEST_CASE("distillation loss anchors and range") {
  Rng rng(12);
  nn::Linear<double> proj("p", 3, 3, rng);
  proj.weight.value() = Tensor<double>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor<double> f({3}, {0.3, -1.2, 2.0});
  Tensor<double> anti = f;
  for (auto& v : anti.data()) v = -v;
  const Tensor<double> orth({3}, {2.0, 0.5, 0.0});  // 0.6 - 0.6 + 0 = 0
  const auto fs = Var<double>::constant(f);
  CHECK(distillation_loss(fs, f, proj).value().item() == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(distillation_loss(fs, orth, proj).value().item() == doctest::Approx(0.0));
  CHECK(distillation_loss(fs, anti, proj).value().item() == doctest::Approx(1.0).epsilon(1e-14));
  for (int i = 0; i < 50; ++i) {
    const double v = distillation_loss(Var<double>::constant(randn<double>({3}, rng)), randn<double>({3}, rng), proj)
                         .value()
                         .item();
    CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("composite loss") {
  auto cfg = small_config();
  DofaModel<double> model(cfg);
  TeacherModel<double> teacher(TeacherConfig::matching(cfg, 3));
  Rng rng(13);
  const auto img = randn<double>({2, 32, 32}, rng);
  const Wavelengths sar{kSarWavelength, kSarWavelength};
  const ProxyRule rule{std::nullopt, true};

  nn::zero_grads(model.parameters());
  auto loss = composite_loss(img, sar, rule, model, teacher, 5);
  CHECK(loss.breakdown.total == loss.breakdown.recon_mse - loss.breakdown.distill_cos);
  CHECK(loss.breakdown.recon_mse >= 0.0);
  CHECK(std::abs(loss.breakdown.distill_cos) <= 1.0);
  nn::backward(loss.total);
  for (auto* p : teacher.parameters()) {
    CHECK_FALSE(p->trainable());
    for (double g : p->grad().data()) CHECK(g == 0.0);
  }
  bool moved = false;
  for (auto* p : model.parameters())
    for (double g : p->grad().data()) moved = moved || g != 0.0;
  CHECK(moved);

  SUBCASE("both terms at their optimum give -1") {
    // Perfect reconstruction supplied as the prediction, and the teacher
    // features replaced by the projected student features.
    const auto plan = random_mask(4, 0.75, 1);
    const auto target = patchify(img, 16);
    const auto proxy = make_proxy(img, rule, 2);
    const auto weights = prepare_batch_weights(model, sar);
    const auto student = model.pooled_features(proxy, weights.proxy);
    const auto projected =
        model.distill_proj(nn::reshape(student, {1, cfg.embed_dim})).value().reshaped({cfg.teacher_dim});
    const double recon = reconstruction_loss(Var<double>::constant(target), target, plan).value().item();
    auto full = composite_loss(img, proxy, projected, plan, model, weights);
    CHECK(recon == 0.0);
    CHECK(full.breakdown.distill_cos == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(recon - full.breakdown.distill_cos == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("generator init loss") {
  Rng rng(14);
  WeightGenerator<double> gen("g", encoder_generator_config(16, 2, 2, 8), rng);
  const auto rgb = rgb_wavelengths();
  const auto own = generate_weights(rgb, gen, 2, 8);
  CHECK(generator_init_loss(gen, own.kernel.value(), own.bias.value()).value().item() == 0.0);

  // Zero output and zero target.
  for (auto* p : ParameterList<double>{&gen.fc_weight.weight, &gen.fc_weight.bias, &gen.fc_bias.weight,
                                       &gen.fc_bias.bias})
    p->value().fill(0.0);
  CHECK(generator_init_loss(gen, Tensor<double>({8, 3, 2, 2}), Tensor<double>({8})).value().item() == 0.0);
  CHECK_THROWS_AS(generator_init_loss(gen, Tensor<double>({4, 3, 2, 2}), Tensor<double>({4})), nn::ShapeError);
}
