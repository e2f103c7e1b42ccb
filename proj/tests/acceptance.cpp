// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Reference values are computed here with plain loops.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dofa/data/dataset.hpp"
#include "dofa/data/raster.hpp"
#include "dofa/data/synth.hpp"
#include "dofa/losses.hpp"
#include "dofa/train/checkpoint.hpp"
#include "dofa/train/init_generator.hpp"
#include "dofa/train/pretrain.hpp"
#include "dofa/train/probe.hpp"
#include "dofa/train/teacher.hpp"
#include "dofa/train/verify.hpp"

namespace fs = std::filesystem;
using namespace dofa;
using nn::Tensor;
using nn::Var;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "dofa_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
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

/// Writes `per` samples of each listed modality, seeded per file and
/// labelled i mod classes, plus a manifest.
fs::path synth_set(const fs::path& dir, const std::vector<std::string>& names, std::size_t per, int classes,
                   std::uint64_t seed) {
  const auto& all = data::builtin_modalities();
  std::vector<data::ManifestEntry> entries;
  for (const auto& name : names) {
    const auto& spec = data::find_modality(name);
    const auto m = static_cast<std::size_t>(&spec - all.data());
    for (std::size_t i = 0; i < per; ++i) {
      char file[96];
      std::snprintf(file, sizeof file, "%s_%05zu.dofa", name.c_str(), i);
      const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
      nn::Rng rng(nn::derive_seed(seed, {m, i}));
      data::write_raster(dir / file, data::synth_sample(spec, 32, 32, label, classes, rng));
      entries.push_back({file, name, label});
    }
  }
  data::write_manifest(dir / "manifest.tsv", entries);
  return dir / "manifest.tsv";
}

std::vector<std::string> all_modalities() {
  std::vector<std::string> out;
  for (const auto& s : data::builtin_modalities()) out.push_back(s.name);
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = train::grad_check_config();
  if (cfg.embed_dim != 64 || cfg.depth != 2 || cfg.image_size != 32) return {false, "unexpected tiny config"};
  DofaModel<double> model(cfg);
  const TeacherModel<double> teacher(TeacherConfig::matching(cfg, 7));
  nn::Rng rng(21);
  const auto image = random_image<double>(2, 32, rng);
  const Wavelengths lambdas{kSarWavelength, kSarWavelength};
  const ProxyRule rule{std::nullopt, true};
  auto loss = [&] { return composite_loss(image, lambdas, rule, model, teacher, 9).total; };

  auto params = model.parameters();
  nn::zero_grads(params);
  nn::backward(loss());

  // Central differences FD(h) and FD(h/2) combined as (4 FD(h/2) - FD(h)) / 3,
  // which cancels the h^2 truncation term. On a smooth stretch the two
  // differences agree to O(h^2); when they do not, a ReLU kink lies inside
  // [x - h, x + h] and the step shrinks.
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0, restepped = 0;
  nn::Rng pick(4);
  for (auto* p : params) {
    if (!p->trainable()) continue;
    auto& value = p->value();
    const std::size_t n = value.numel();
    for (int s = 0; s < 4; ++s) {
      const auto idx = static_cast<std::size_t>(pick.uniform(0.0, static_cast<double>(n))) % n;
      const double saved = value[idx];
      auto fd = [&](double h) {
        nn::NoGradGuard ng;
        value[idx] = saved + h;
        const double up = loss().value().item();
        value[idx] = saved - h;
        const double down = loss().value().item();
        value[idx] = saved;
        return (up - down) / (2 * h);
      };
      auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
      double h = 2e-4, numeric = 0.0;
      bool shrunk = false;
      while (true) {
        const double f1 = fd(h), f2 = fd(h / 2);
        numeric = (4 * f2 - f1) / 3;
        if (rel(f1, f2) < 1e-4 || h < 1e-6) break;
        h /= 10;
        shrunk = true;
      }
      restepped += shrunk;
      const double analytic = p->grad()[idx];
      const double err = rel(numeric, analytic);
      ++checked;
      if (err > worst) {
        worst = err;
        where = p->name() + "[" + std::to_string(idx) + "]";
      }
    }
  }
  const double secs = elapsed(t0);
  return {worst < 1e-4 && secs < 120.0, fmt("max rel err %.3g", worst) + " at " + where + " over " +
                                           std::to_string(checked) + " elements (" + std::to_string(restepped) +
                                           " re-stepped at a kink), " + fmt("%.1fs", secs)};
}

Outcome channel_universality() {
  const ModelConfig cfg = ModelConfig::desk();
  DofaModel<float> model(cfg);
  const auto count = model.parameter_count();
  const auto before = train::snapshot(model.parameters());
  const std::size_t p = cfg.patch_size, n = cfg.num_patches(), d = cfg.embed_dim;
  nn::Rng rng(2);
  bool ok = true;
  std::string bad;
  for (std::size_t c : {1, 2, 3, 4, 9, 202}) {
    const auto lambdas = random_lambdas(c, rng);
    const auto image = random_image<float>(c, cfg.image_size, rng);
    const auto k = model.encoder_weights(lambdas);
    const auto head = model.decoder_weights(lambdas);
    const auto plan = random_mask(n, cfg.mask_ratio, c);
    const auto latent = model.encode(image, k, &plan);
    const auto pred = model.decode(latent, plan, head);
    const auto full = model.encode(image, k, nullptr);
    const bool shapes = k.kernel.value().shape() == nn::Shape{d, c, p, p} && k.bias.value().shape() == nn::Shape{d} &&
                        head.weight.value().shape() == nn::Shape{cfg.decoder_dim, c * p * p} &&
                        head.bias.value().shape() == nn::Shape{c * p * p} &&
                        latent.value().shape() == nn::Shape{plan.keep_indices.size() + 1, d} &&
                        full.value().shape() == nn::Shape{n + 1, d} && pred.value().shape() == nn::Shape{n, c * p * p};
    bool finite = true;
    for (float v : pred.value().data()) finite = finite && std::isfinite(v);
    if (!shapes || !finite || model.parameter_count() != count) {
      ok = false;
      bad += " C=" + std::to_string(c);
    }
  }
  const bool unchanged = train::snapshot(model.parameters()) == before;
  return {ok && unchanged, ok && unchanged ? std::to_string(count) + " parameters for every C in {1,2,3,4,9,202}"
                                           : "failed for" + bad + (unchanged ? "" : " (parameters changed)")};
}

Outcome permutation_symmetry() {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  cfg.decoder_dim = 32;
  cfg.wave_dim = 64;
  cfg.num_weight_tokens = 8;
  cfg.init_seed = 17;
  DofaModel<double> model(cfg);
  nn::Rng rng(8);
  double worst_kernel = 0.0, worst_tokens = 0.0;
  int trials = 0;
  for (std::size_t c : {2, 3, 5, 9, 13}) {
    const auto lambdas = random_lambdas(c, rng);
    const auto image = random_image<double>(c, cfg.image_size, rng);
    const auto base_k = model.encoder_weights(lambdas).kernel.value();
    const auto base_tokens = model.encode(image, lambdas).value();
    for (int t = 0; t < 5; ++t, ++trials) {
      std::vector<std::size_t> order(c);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order.begin(), order.end());
      const auto lp = lambdas.permuted(order);
      for (std::size_t i = 0; i < c; ++i) {
        if (lp[i] != lambdas[order[i]]) return {false, "Wavelengths::permuted convention differs"};
      }
      // Kernel channel i must be the old channel order[i].
      const auto k = model.encoder_weights(lp).kernel.value();
      const std::size_t pp = cfg.patch_size * cfg.patch_size;
      for (std::size_t o = 0; o < cfg.embed_dim; ++o)
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t e = 0; e < pp; ++e)
            worst_kernel = std::max(worst_kernel, std::abs(k[(o * c + i) * pp + e] - base_k[(o * c + order[i]) * pp + e]));
      Tensor<double> moved({c, cfg.image_size, cfg.image_size});
      const std::size_t plane = cfg.image_size * cfg.image_size;
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t e = 0; e < plane; ++e) moved[i * plane + e] = image[order[i] * plane + e];
      const auto tokens = model.encode(moved, lp).value();
      for (std::size_t e = 0; e < tokens.numel(); ++e)
        worst_tokens = std::max(worst_tokens, std::abs(tokens[e] - base_tokens[e]));
    }
  }
  return {trials >= 20 && worst_kernel < 1e-5 && worst_tokens < 1e-5,
          std::to_string(trials) + " permutations, kernel " + fmt("%.2g", worst_kernel) + ", tokens " +
              fmt("%.2g", worst_tokens)};
}

Outcome masking_accounting() {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto plan = random_mask(196, 0.75, seed);
    if (plan.keep_indices.size() != 49 || plan.mask_indices.size() != 147)
      return {false, "seed " + std::to_string(seed) + ": " + std::to_string(plan.keep_indices.size()) + " kept"};
    std::vector<int> seen(196, 0);
    for (auto i : plan.keep_indices) ++seen[i];
    for (auto i : plan.mask_indices) ++seen[i];
    if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) return {false, "not a partition"};
    // Shuffle tokens into [keep ++ mask] order, then restore.
    std::vector<std::size_t> shuffled = plan.keep_indices;
    shuffled.insert(shuffled.end(), plan.mask_indices.begin(), plan.mask_indices.end());
    for (std::size_t i = 0; i < 196; ++i) {
      if (shuffled[plan.restore_permutation[i]] != i) return {false, "restore permutation is not the inverse"};
    }
  }
  return {true, "49 kept / 147 masked, exact inverse over 50 seeds"};
}

Outcome generator_init() {
  const auto cfg = ModelConfig::desk();
  DofaModel<float> model(cfg);
  const auto teacher = train::random_teacher(cfg);
  train::InitGenConfig icfg;
  icfg.steps = 200;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train::init_generator(model.enc_generator, teacher, icfg);
  // Recompute the final loss independently of the optimizer's bookkeeping.
  double recomputed;
  {
    nn::NoGradGuard ng;
    recomputed = generator_init_loss(model.enc_generator, teacher.patch_kernel.value(), teacher.patch_bias.value())
                     .value()
                     .item();
  }
  const double ratio = recomputed / r.initial_loss;
  return {r.steps_run <= 200 && ratio < 0.1, fmt("loss %.4g", r.initial_loss) + fmt(" -> %.4g", recomputed) +
                                                  fmt(" (ratio %.4f)", ratio) + " in " + std::to_string(r.steps_run) +
                                                  " steps, " + fmt("%.1fs", elapsed(t0))};
}

struct PretrainRun {
  train::PretrainResult result;
  fs::path dir;
};

Outcome pretraining_efficacy(PretrainRun& run) {
  const auto dir = work_dir("pretrain");
  fs::create_directories(dir / "data");
  const auto manifest = synth_set(dir / "data", all_modalities(), 100, 10, 1);
  train::PretrainOptions opts;
  opts.model = ModelConfig::desk();
  opts.optim = train::OptimConfig::desk();
  opts.manifest = manifest;
  opts.out_dir = dir / "run";
  const auto t0 = std::chrono::steady_clock::now();
  run.result = train::pretrain(opts);
  run.dir = dir;
  const double secs = elapsed(t0);
  const auto& e = run.result.epochs;
  if (e.size() != 20) return {false, std::to_string(e.size()) + " epochs"};
  // Epoch means recomputed from the per-step history.
  const std::size_t spe = run.result.steps_per_epoch;
  auto mean = [&](std::size_t epoch, auto field) {
    double s = 0;
    for (std::size_t i = epoch * spe; i < (epoch + 1) * spe; ++i) s += field(run.result.history[i]);
    return s / static_cast<double>(spe);
  };
  auto recon = [](const train::MetricRecord& m) { return m.recon; };
  auto cos = [](const train::MetricRecord& m) { return -m.distill; };
  const double r1 = mean(0, recon), r20 = mean(19, recon);
  const double c1 = mean(0, cos), c20 = mean(19, cos);
  const bool ok = run.result.history.size() == 20 * spe && r20 <= 0.5 * r1 && c20 > c1 && secs < 600.0;
  return {ok, fmt("recon %.4f", r1) + fmt(" -> %.4f", r20) + fmt(" (%.3f)", r20 / r1) + fmt(", cos %.4f", c1) +
                  fmt(" -> %.4f", c20) + fmt(", %.0fs", secs)};
}

Outcome transfer_efficacy(const PretrainRun& run) {
  if (run.result.last_checkpoint.empty()) return {false, "no pretrained checkpoint"};
  const auto dir = work_dir("probe");
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "val");
  const auto train_m = synth_set(dir / "train", {"sentinel2"}, 2000, 10, 2);
  const auto val_m = synth_set(dir / "val", {"sentinel2"}, 1000, 10, 3);
  const auto train_ds = data::load_dataset(train_m);
  const auto val_ds = data::load_dataset(val_m);

  const auto ckpt = train::load_checkpoint(run.result.last_checkpoint);
  auto model = train::load_model(ckpt);
  train::ProbeConfig pcfg;
  if (pcfg.epochs != 50) return {false, "probe epochs default changed"};
  const auto t0 = std::chrono::steady_clock::now();
  const auto pre = train::linear_probe(model, train_ds, val_ds, pcfg, ckpt.optim.seed);
  DofaModel<float> random_model(ckpt.model);
  const auto base = train::linear_probe(random_model, train_ds, val_ds, pcfg, ckpt.optim.seed);

  // Accuracy again from the confusion matrix.
  auto top1 = [](const train::ProbeResult& r) {
    std::size_t right = 0, total = 0;
    for (std::size_t i = 0; i < r.confusion.size(); ++i)
      for (std::size_t j = 0; j < r.confusion[i].size(); ++j) {
        total += r.confusion[i][j];
        if (i == j) right += r.confusion[i][j];
      }
    return total ? static_cast<double>(right) / static_cast<double>(total) : 0.0;
  };
  const double a = top1(pre), b = top1(base);
  const bool ok = a >= 0.90 && a - b >= 0.05 && std::abs(a - pre.val_top1) < 1e-12;
  return {ok, fmt("pretrained %.1f%%", 100 * a) + fmt(", random init %.1f%%", 100 * b) +
                  fmt(", gap %.1f points", 100 * (a - b)) + fmt(", %.0fs", elapsed(t0))};
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  cfg.decoder_dim = 32;
  cfg.wave_dim = 32;
  cfg.num_weight_tokens = 4;
  cfg.teacher_dim = 32;
  cfg.teacher_depth = 1;
  cfg.init_seed = 3;
  return cfg;
}

Outcome determinism() {
  const auto dir = work_dir("determinism");
  fs::create_directories(dir / "data");
  const auto manifest = synth_set(dir / "data", all_modalities(), 12, 10, 5);
  train::PretrainOptions opts;
  opts.model = small_model();
  opts.optim = train::OptimConfig::desk();
  opts.optim.total_epochs = 3;
  opts.optim.warmup_epochs = 1;
  opts.optim.seed = 11;
  opts.manifest = manifest;

  opts.out_dir = dir / "a";
  const auto a = train::pretrain(opts);
  opts.out_dir = dir / "b";
  const auto b = train::pretrain(opts);
  bool same = slurp(dir / "a" / "metrics.tsv") == slurp(dir / "b" / "metrics.tsv");
  for (std::size_t e = 1; e <= 3; ++e) {
    same = same && slurp(train::epoch_checkpoint_path(dir / "a", e)) == slurp(train::epoch_checkpoint_path(dir / "b", e));
  }

  // Save/load: bytes and every tensor bit for bit.
  const auto bytes = slurp(a.last_checkpoint);
  const auto ckpt = train::load_checkpoint(a.last_checkpoint);
  const auto re = train::encode_checkpoint(ckpt);
  bool exact = std::string(re.begin(), re.end()) == bytes;
  auto model = train::load_model(ckpt);
  const auto back = train::snapshot(model.parameters());
  exact = exact && back.size() == ckpt.params.size();
  for (std::size_t i = 0; exact && i < back.size(); ++i) {
    const auto& x = back[i].value.data();
    const auto& y = ckpt.params[i].value.data();
    exact = back[i].name == ckpt.params[i].name && x.size() == y.size() &&
            std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
  }

  // Interrupted after epoch 1, then resumed.
  opts.out_dir = dir / "c";
  opts.stop_after_epoch = 1;
  train::pretrain(opts);
  opts.stop_after_epoch.reset();
  opts.resume = train::epoch_checkpoint_path(dir / "c", 1);
  const auto c = train::pretrain(opts);
  double worst = c.history.size() == a.history.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.history.size(), c.history.size()); ++i) {
    worst = std::max({worst, std::abs(a.history[i].total - c.history[i].total),
                      std::abs(a.history[i].recon - c.history[i].recon),
                      std::abs(a.history[i].distill - c.history[i].distill)});
  }
  const bool ok = same && exact && worst <= 1e-6;
  return {ok, std::string(same ? "reruns byte-identical" : "reruns differ") +
                  (exact ? ", checkpoint round trip exact" : ", checkpoint round trip differs") +
                  fmt(", resume max step diff %.2g", worst) + " over " + std::to_string(a.history.size()) + " steps"};
}

Outcome loss_anchors() {
  nn::Rng rng(30);
  nn::Linear<double> proj("proj", 6, 4, rng);
  for (auto& v : proj.bias.value().data()) v = rng.normal();
  Tensor<double> student({6});
  for (auto& v : student.data()) v = rng.normal();
  // Projected student by hand: x·W + b with W stored [in, out].
  std::vector<double> y(4);
  for (std::size_t o = 0; o < 4; ++o) {
    y[o] = proj.bias.value()[o];
    for (std::size_t i = 0; i < 6; ++i) y[o] += student[i] * proj.weight.value()[i * 4 + o];
  }
  std::vector<double> z(4);
  for (auto& v : z) v = rng.normal();
  double yz = 0, yy = 0;
  for (std::size_t o = 0; o < 4; ++o) yz += y[o] * z[o], yy += y[o] * y[o];
  for (std::size_t o = 0; o < 4; ++o) z[o] -= yz / yy * y[o];
  Tensor<double> same({4}), orth({4}), anti({4});
  for (std::size_t o = 0; o < 4; ++o) {
    same[o] = 2.5 * y[o];
    orth[o] = z[o];
    anti[o] = -0.7 * y[o];
  }
  const auto s = Var<double>::constant(student);
  const double l_same = distillation_loss(s, same, proj).value().item();
  const double l_orth = distillation_loss(s, orth, proj).value().item();
  const double l_anti = distillation_loss(s, anti, proj).value().item();

  const std::size_t n = 196, width = 3 * 16;
  Tensor<double> target({n, width});
  for (auto& v : target.data()) v = rng.normal();
  Tensor<double> shifted = target;
  for (auto& v : shifted.data()) v += 1.0;
  const auto plan = random_mask(n, 0.75, 2);
  const double r0 = reconstruction_loss(Var<double>::constant(target), target, plan).value().item();
  const double r1 = reconstruction_loss(Var<double>::constant(shifted), target, plan).value().item();
  const double r1_all = reconstruction_loss(Var<double>::constant(shifted), target, plan, true).value().item();

  const double tol = 1e-12;
  const bool ok = std::abs(l_same + 1) < tol && std::abs(l_orth) < tol && std::abs(l_anti - 1) < tol && r0 == 0.0 &&
                  std::abs(r1 - 1) < tol && std::abs(r1_all - 1) < tol;
  return {ok, fmt("distill %.3g", l_same) + fmt(" / %.3g", l_orth) + fmt(" / %.3g", l_anti) + fmt(", recon %.3g", r0) +
                  fmt(" / %.12g", r1)};
}

Outcome format_robustness() {
  // Raster.
  nn::Rng rng(6);
  const auto img = data::synth_sample(data::find_modality("gaofen"), 32, 32, 4, 10, rng);
  const auto rbytes = data::encode_raster(img);
  const auto rback = data::decode_raster(rbytes);
  bool round = rback.wavelengths == img.wavelengths && rback.label == img.label &&
               rback.data.shape() == img.data.shape() &&
               std::memcmp(rback.data.data().data(), img.data.data().data(), img.data.numel() * sizeof(float)) == 0 &&
               data::encode_raster(rback) == rbytes;

  auto raster_kind = [](std::vector<std::uint8_t> b) {
    try {
      data::decode_raster(b);
    } catch (const data::RasterError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto r_magic = rbytes;
  r_magic[1] ^= 0xFF;
  auto r_trunc = rbytes;
  r_trunc.resize(rbytes.size() / 2);
  auto r_crc = rbytes;
  r_crc[40] ^= 0x01;
  const int rk[3] = {raster_kind(r_magic), raster_kind(r_trunc), raster_kind(r_crc)};
  using RK = data::RasterError::Kind;
  bool raster_ok = rk[0] == static_cast<int>(RK::kBadMagic) && rk[1] == static_cast<int>(RK::kTruncatedPayload) &&
                   rk[2] == static_cast<int>(RK::kBadCrc);

  // Checkpoint.
  DofaModel<float> model(small_model());
  auto ckpt = train::model_checkpoint(model);
  ckpt.state = {7, 1, {{7, 1e-3, 1.5, -0.25, 1.75}}};
  const auto cbytes = train::encode_checkpoint(ckpt);
  const auto cback = train::decode_checkpoint(cbytes);
  round = round && cback == ckpt && train::encode_checkpoint(cback) == cbytes;

  auto ckpt_kind = [](std::vector<std::uint8_t> b) {
    try {
      train::decode_checkpoint(b);
    } catch (const train::CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto c_magic = cbytes;
  c_magic[0] ^= 0xFF;
  auto c_trunc = cbytes;
  c_trunc.resize(cbytes.size() - 100);
  auto c_crc = cbytes;
  c_crc[cbytes.size() / 2] ^= 0x10;
  const int ck[3] = {ckpt_kind(c_magic), ckpt_kind(c_trunc), ckpt_kind(c_crc)};
  using CK = train::CheckpointError::Kind;
  bool ckpt_ok = ck[0] == static_cast<int>(CK::kBadMagic) && ck[1] == static_cast<int>(CK::kTruncated) &&
                 ck[2] == static_cast<int>(CK::kBadCrc);

  return {round && raster_ok && ckpt_ok,
          std::string(round ? "round trips exact" : "round trip differs") + "; raster kinds " + std::to_string(rk[0]) +
              "/" + std::to_string(rk[1]) + "/" + std::to_string(rk[2]) + ", checkpoint kinds " +
              std::to_string(ck[0]) + "/" + std::to_string(ck[1]) + "/" + std::to_string(ck[2])};
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main() {
  PretrainRun run;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"channel-count universality", channel_universality},
      {"permutation equivariance", permutation_symmetry},
      {"masking accounting", masking_accounting},
      {"generator init distillation", generator_init},
      {"pretraining efficacy", [&] { return pretraining_efficacy(run); }},
      {"transfer efficacy", [&] { return transfer_efficacy(run); }},
      {"determinism and persistence", determinism},
      {"loss anchors", loss_anchors},
      {"format robustness", format_robustness},
  };
  int failed = 0, i = 0;
  for (const auto& [name, f] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = guarded(f);
    failed += !r.passed;
    std::printf("%s  %2d %-30s %7.1fs  %s\n", r.passed ? "PASS" : "FAIL", ++i, name.c_str(), elapsed(t0),
                r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
