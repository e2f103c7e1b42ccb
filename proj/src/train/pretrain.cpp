// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "dofa/train/teacher.hpp"

namespace dofa::train {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kBatchTag = 0x62617463;

void write_metric(std::ostream& out, const MetricRecord& r) {
  char line[256];
  std::snprintf(line, sizeof line, "%llu\t%.9g\t%.9g\t%.9g\t%.9g\n", static_cast<unsigned long long>(r.step), r.lr,
                r.recon, r.distill, r.total);
  out << line;
}

/// Teacher outputs depend only on the image and the proxy channels, so they
/// are computed once per (image, first proxy channel).
class TeacherCache {
 public:
  explicit TeacherCache(const TeacherModel<float>& teacher) : teacher_(teacher) {}

  const nn::Tensor<float>& get(std::size_t image, std::size_t channel, const nn::Tensor<float>& proxy) {
    const auto key = std::make_pair(image, channel);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, teacher_.features(proxy)).first;
    return it->second;
  }

 private:
  const TeacherModel<float>& teacher_;
  std::map<std::pair<std::size_t, std::size_t>, nn::Tensor<float>> cache_;
};

}  // namespace

fs::path epoch_checkpoint_path(const fs::path& out_dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03zu.dofc", epoch);
  return out_dir / "checkpoints" / name;
}

std::vector<EpochSummary> summarize_epochs(const std::vector<MetricRecord>& history, std::size_t steps_per_epoch) {
  std::vector<EpochSummary> out;
  if (steps_per_epoch == 0) return out;
  for (std::size_t start = 0; start + steps_per_epoch <= history.size(); start += steps_per_epoch) {
    EpochSummary e;
    e.epoch = out.size() + 1;
    for (std::size_t i = start; i < start + steps_per_epoch; ++i) {
      e.recon += history[i].recon;
      e.distill_cos -= history[i].distill;
      e.total += history[i].total;
    }
    const auto n = static_cast<double>(steps_per_epoch);
    e.recon /= n;
    e.distill_cos /= n;
    e.total /= n;
    out.push_back(e);
  }
  return out;
}

PretrainResult pretrain(const PretrainOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  opts.model.validate();
  opts.optim.validate();
  const auto& cfg = opts.model;
  const auto& ocfg = opts.optim;

  const auto ds = data::load_dataset(opts.manifest);
  if (ds.size() == 0) throw std::invalid_argument("pretrain: empty dataset " + opts.manifest.string());
  for (const auto& img : ds.images) {
    if (img.data.dim(1) != cfg.image_size || img.data.dim(2) != cfg.image_size) {
      throw std::invalid_argument("pretrain: image size " + std::to_string(img.data.dim(1)) +
                                  " does not match model image_size " + std::to_string(cfg.image_size));
    }
  }

  DofaModel<float> model(cfg);
  if (opts.init_gen) {
    const auto gen = load_checkpoint(*opts.init_gen);
    if (gen.kind != CheckpointKind::kGenerator) {
      throw CheckpointError(CheckpointError::Kind::kMismatch, opts.init_gen->string() + ": not a generator checkpoint");
    }
    nn::ParameterList<float> gen_params;
    model.enc_generator.collect(gen_params);
    restore(gen.params, gen_params);
  }
  const TeacherModel<float> teacher = opts.teacher ? load_teacher(load_checkpoint(*opts.teacher), cfg) : random_teacher(cfg);

  auto params = model.parameters();
  AdamW<float> opt(params, ocfg);
  TrainState state;
  if (opts.resume) {
    const auto ckpt = load_checkpoint(*opts.resume);
    if (ckpt.kind != CheckpointKind::kModel) {
      throw CheckpointError(CheckpointError::Kind::kMismatch, opts.resume->string() + ": not a model checkpoint");
    }
    if (!(ckpt.model == cfg) || !(ckpt.optim == ocfg)) {
      throw CheckpointError(CheckpointError::Kind::kMismatch,
                            opts.resume->string() + ": model or optimizer settings differ from this run");
    }
    restore(ckpt.params, params);
    restore_optimizer(ckpt.optimizer, opt);
    state = ckpt.state;
    opt.set_step_count(state.step);
  }

  fs::create_directories(opts.out_dir / "checkpoints");
  const auto metrics_path = opts.out_dir / "metrics.tsv";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  for (const auto& r : state.history) write_metric(metrics, r);
  metrics.flush();

  std::vector<const data::ModalitySpec*> specs;
  for (const auto& img : ds.images) specs.push_back(&data::find_modality(img.modality));

  const std::size_t steps_per_epoch = data::batch_iter(ds.images, ocfg.batch_size, 0).size();
  const std::size_t last_epoch = std::min(ocfg.total_epochs, opts.stop_after_epoch.value_or(ocfg.total_epochs));
  TeacherCache teacher_cache(teacher);
  PretrainResult result;

  for (std::size_t epoch = state.epoch; epoch < last_epoch; ++epoch) {
    const auto batches = data::batch_iter(ds.images, ocfg.batch_size, nn::derive_seed(ocfg.seed, {kBatchTag, epoch}));
    for (const auto& batch : batches) {
      const double lr = lr_schedule(state.step, steps_per_epoch, ocfg);
      nn::zero_grads(params);
      const auto& first = ds.images[batch.indices.front()];
      const auto weights = prepare_batch_weights(model, first.wavelengths);

      Var<float> sum;
      double recon = 0.0, distill = 0.0;
      for (std::size_t k = 0; k < batch.indices.size(); ++k) {
        const std::size_t idx = batch.indices[k];
        const auto& img = ds.images[idx];
        const auto sample_seed = nn::derive_seed(ocfg.seed, {state.step, idx});
        const auto plan = random_mask(cfg.num_patches(), cfg.mask_ratio, nn::derive_seed(sample_seed, {1}));
        const auto rule = specs[idx]->proxy_rule();
        const auto proxy_seed = nn::derive_seed(sample_seed, {2});
        const auto pick = proxy_channels(rule, img.channels(), proxy_seed);
        const auto proxy = make_proxy(img.data, rule, proxy_seed);
        const auto& tfeat = teacher_cache.get(idx, pick[0], proxy);
        auto loss = composite_loss(img.data, proxy, tfeat, plan, model, weights);
        recon += loss.breakdown.recon_mse;
        distill -= loss.breakdown.distill_cos;
        sum = k == 0 ? loss.total : nn::add(sum, loss.total);
      }
      const auto inv = 1.0 / static_cast<double>(batch.indices.size());
      auto batch_loss = nn::scale(sum, static_cast<float>(inv));
      const MetricRecord rec{state.step, lr, recon * inv, distill * inv, static_cast<double>(batch_loss.value().item())};
      if (!std::isfinite(rec.total) || !std::isfinite(rec.recon) || !std::isfinite(rec.distill)) {
        std::string ids;
        for (auto i : batch.indices) ids += (ids.empty() ? "" : ", ") + ds.ids[i];
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(state.step) + " (epoch " +
                            std::to_string(epoch + 1) + ", " + batch.modality + " batch: " + ids + ")");
      }
      nn::backward(batch_loss);
      opt.step(lr);
      write_metric(metrics, rec);
      state.history.push_back(rec);
      ++state.step;
    }
    metrics.flush();
    state.epoch = epoch + 1;

    Checkpoint ckpt = model_checkpoint(model);
    ckpt.optim = ocfg;
    ckpt.state = state;
    ckpt.optimizer = snapshot_optimizer(opt);
    result.last_checkpoint = epoch_checkpoint_path(opts.out_dir, state.epoch);
    save_checkpoint(result.last_checkpoint, ckpt);

    if (opts.progress) {
      const auto summary = summarize_epochs(state.history, steps_per_epoch);
      if (!summary.empty()) {
        const auto& e = summary.back();
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu/%zu  recon %.4f  cos %.4f  total %.4f\n", state.epoch,
                      ocfg.total_epochs, e.recon, e.distill_cos, e.total);
        *opts.progress << line << std::flush;
      }
    }
  }

  result.history = state.history;
  result.steps_per_epoch = steps_per_epoch;
  result.epochs = summarize_epochs(state.history, steps_per_epoch);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace dofa::train
