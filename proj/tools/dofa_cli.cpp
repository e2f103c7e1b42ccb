// SPDX-License-Identifier: Apache-2.0

// dofa: synthetic data, generator init, pretraining, probing, export, verify.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "dofa/data/dataset.hpp"
#include "dofa/data/raster.hpp"
#include "dofa/data/synth.hpp"
#include "dofa/train/embeddings.hpp"
#include "dofa/train/init_generator.hpp"
#include "dofa/train/pretrain.hpp"
#include "dofa/train/probe.hpp"
#include "dofa/train/teacher.hpp"
#include "dofa/train/verify.hpp"

namespace fs = std::filesystem;
using namespace dofa;

namespace {

std::size_t thread_cap() {
  const char* env = std::getenv("DOFA_THREADS");
  if (!env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 0 ? static_cast<std::size_t>(n) : 1;
}

train::RunConfig load_config(const std::string& path) {
  return path.empty() ? train::RunConfig{} : train::load_run_config(path);
}

int cmd_synth(const fs::path& out, std::size_t per_modality, int classes, std::size_t size, std::uint64_t seed,
              std::vector<std::string> names, const std::string& config_path, const CLI::App& sub) {
  auto cfg = load_config(config_path);
  // Flags win over the config file; the config wins over flag defaults.
  if (!config_path.empty()) {
    if (sub.count("--per-modality") == 0) per_modality = cfg.data.per_modality;
    if (sub.count("--classes") == 0) classes = cfg.data.classes;
    if (sub.count("--seed") == 0) seed = cfg.data.seed;
    if (sub.count("--modalities") == 0) names = cfg.data.modalities;
    if (sub.count("--size") == 0) size = cfg.model.image_size;
  }
  if (classes < 1) throw CLI::ValidationError("--classes", "must be at least 1");
  std::vector<const data::ModalitySpec*> specs;
  if (names.empty()) {
    for (const auto& s : data::builtin_modalities()) specs.push_back(&s);
  } else {
    for (const auto& n : names) specs.push_back(&data::find_modality(n));
  }
  fs::create_directories(out);

  struct Job {
    const data::ModalitySpec* spec;
    std::size_t modality_index, i;
    std::string file;
  };
  std::vector<Job> jobs;
  std::vector<data::ManifestEntry> manifest;
  for (const auto* spec : specs) {
    const auto m = static_cast<std::size_t>(&*spec - data::builtin_modalities().data());
    for (std::size_t i = 0; i < per_modality; ++i) {
      char name[96];
      std::snprintf(name, sizeof name, "%s_%05zu.dofa", spec->name.c_str(), i);
      jobs.push_back({spec, m, i, name});
      manifest.push_back({name, spec->name, static_cast<int>(i % static_cast<std::size_t>(classes))});
    }
  }
  // Each sample has its own seed, so the split across threads does not
  // affect file contents.
  const std::size_t workers = std::min(thread_cap(), std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      for (std::size_t j = w; j < jobs.size(); j += workers) {
        const auto& job = jobs[j];
        nn::Rng rng(nn::derive_seed(seed, {job.modality_index, job.i}));
        const auto img = data::synth_sample(*job.spec, size, size, manifest[j].label, classes, rng, cfg.data.synth);
        data::write_raster(out / job.file, img);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  data::write_manifest(out / "manifest.tsv", manifest);
  for (const auto* spec : specs) std::cout << spec->name << '\t' << per_modality << '\n';
  std::cout << "manifest\t" << (out / "manifest.tsv").string() << '\n';
  return 0;
}

int cmd_teacher(const std::string& config_path, const fs::path& out) {
  const auto cfg = load_config(config_path);
  auto teacher = train::random_teacher(cfg.model);
  train::save_checkpoint(out, train::teacher_checkpoint(teacher, cfg.model));
  std::cout << "teacher\t" << out.string() << '\n';
  return 0;
}

int cmd_init_generator(const std::string& teacher_path, bool random_teacher, const std::string& config_path,
                       const fs::path& out, std::optional<std::size_t> steps) {
  auto cfg = load_config(config_path);
  if (steps) cfg.init_gen.steps = *steps;
  if (teacher_path.empty() == !random_teacher) {
    throw CLI::ValidationError("--teacher/--random-teacher", "give exactly one of them");
  }
  if (!teacher_path.empty() && !fs::exists(teacher_path)) {
    throw std::runtime_error("teacher checkpoint not found: " + teacher_path);
  }
  const auto teacher = random_teacher ? train::random_teacher(cfg.model)
                                      : train::load_teacher(train::load_checkpoint(teacher_path), cfg.model);
  DofaModel<float> model(cfg.model);
  const auto result = train::init_generator(model.enc_generator, teacher, cfg.init_gen);
  train::save_checkpoint(out, train::generator_checkpoint(model));
  std::printf("initial_loss\t%.9g\nfinal_loss\t%.9g\nratio\t%.9g\nsteps\t%zu\n", result.initial_loss,
              result.final_loss, result.final_loss / result.initial_loss, result.steps_run);
  return 0;
}

int cmd_pretrain(const std::string& manifest, const std::string& config_path, const std::string& init_gen,
                 const std::string& teacher, const fs::path& out, const std::string& resume,
                 std::optional<std::size_t> stop_after) {
  auto cfg = load_config(config_path);
  cfg.data.manifest = manifest;
  cfg.paths.out = out.string();
  cfg.paths.init_gen = init_gen;
  cfg.paths.teacher = teacher;
  train::PretrainOptions opts;
  opts.model = cfg.model;
  opts.optim = cfg.optim;
  opts.manifest = manifest;
  opts.out_dir = out;
  if (!teacher.empty()) opts.teacher = teacher;
  if (!init_gen.empty()) opts.init_gen = init_gen;
  if (!resume.empty()) opts.resume = resume;
  opts.stop_after_epoch = stop_after;
  opts.progress = &std::cerr;
  fs::create_directories(out);
  train::write_run_config(out / "config.ini", cfg);
  const auto result = train::pretrain(opts);
  if (!result.epochs.empty()) {
    const auto& first = result.epochs.front();
    const auto& last = result.epochs.back();
    std::printf("steps\t%zu\nrecon_first_epoch\t%.6g\nrecon_last_epoch\t%.6g\ncos_first_epoch\t%.6g\n"
                "cos_last_epoch\t%.6g\nseconds\t%.1f\n",
                result.history.size(), first.recon, last.recon, first.distill_cos, last.distill_cos, result.seconds);
  }
  if (!result.last_checkpoint.empty()) std::cout << "checkpoint\t" << result.last_checkpoint.string() << '\n';
  return 0;
}

nlohmann::json probe_json(const train::ProbeResult& r) {
  nlohmann::json j;
  j["val_top1"] = r.val_top1;
  j["best_lr"] = r.best_lr;
  j["seconds"] = r.seconds;
  for (const auto& [lr, acc] : r.sweep) j["sweep"].push_back({{"lr", lr}, {"holdout_acc", acc}});
  for (const auto& e : r.history) {
    j["epochs"].push_back(
        {{"train_loss", e.train_loss}, {"train_acc", e.train_acc}, {"val_loss", e.val_loss}, {"val_acc", e.val_acc}});
  }
  j["confusion"] = r.confusion;
  return j;
}

int cmd_probe(const std::string& ckpt_path, const std::string& train_manifest, const std::string& val_manifest,
              const fs::path& out, bool baseline, const std::string& config_path) {
  auto cfg = load_config(config_path);
  const auto ckpt = train::load_checkpoint(ckpt_path);
  auto model = train::load_model(ckpt);
  const auto train_ds = data::load_dataset(train_manifest);
  const auto val_ds = data::load_dataset(val_manifest);
  cfg.model = ckpt.model;
  cfg.data.train_manifest = train_manifest;
  cfg.data.val_manifest = val_manifest;
  cfg.paths.checkpoint = ckpt_path;
  cfg.paths.out = out.string();
  fs::create_directories(out);
  train::write_run_config(out / "config.ini", cfg);

  nlohmann::json report;
  const auto result = train::linear_probe(model, train_ds, val_ds, cfg.probe, cfg.optim.seed);
  report["pretrained"] = probe_json(result);
  std::printf("top1\t%.4f\n", result.val_top1);
  if (baseline) {
    DofaModel<float> random_model(ckpt.model);
    const auto base = train::linear_probe(random_model, train_ds, val_ds, cfg.probe, cfg.optim.seed);
    report["random_init"] = probe_json(base);
    std::printf("random_init_top1\t%.4f\n", base.val_top1);
  }
  std::ofstream(out / "probe.json") << report.dump(2) << '\n';
  return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& manifest, const fs::path& out) {
  const auto model = train::load_model(train::load_checkpoint(ckpt_path));
  const auto ds = data::load_dataset(manifest);
  const auto table = train::compute_embeddings(model, ds);
  train::write_embeddings(out, table);
  std::printf("rows\t%zu\ndim\t%zu\n", table.features.dim(0), table.features.dim(1));
  return 0;
}

int cmd_verify(const std::string& level, bool inject_fault) {
  train::VerifyOptions opts;
  opts.full = level == "full";
  if (inject_fault) {
    opts.corrupt_gradients = [](nn::ParameterList<double>& params) {
      auto& g = params.front()->grad();
      for (auto& v : g.data()) v += 1e-2;
    };
  }
  const auto checks = train::run_verify(opts);
  bool all = true;
  for (const auto& c : checks) {
    std::printf("%-4s  %-46s %7.2fs  %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.seconds, c.detail.c_str());
    all = all && c.passed;
  }
  if (!all) {
    std::fprintf(stderr, "failed checks:");
    for (const auto& c : checks) {
      if (!c.passed) std::fprintf(stderr, " [%s]", c.name.c_str());
    }
    std::fprintf(stderr, "\n");
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wavelength-conditioned dynamic patch embedding: data, pretraining and evaluation"};
  app.require_subcommand(1);

  std::string out, config, teacher, init_gen, manifest, resume, ckpt, train_m, val_m, level = "fast";
  std::size_t per_modality = 10, size = 32;
  int classes = 10;
  std::uint64_t seed = 0;
  std::vector<std::string> modalities;
  bool random_teacher = false, baseline = false, inject_fault = false;
  std::optional<std::size_t> steps, stop_after;

  auto* synth = app.add_subcommand("synth", "Write synthetic rasters and a manifest");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--per-modality", per_modality, "Samples per modality")->check(CLI::PositiveNumber);
  synth->add_option("--classes", classes, "Number of classes")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Image height and width")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--modalities", modalities, "Subset of built-in modalities")->delimiter(',');
  synth->add_option("--config", config, "Run config (synthesis knobs in [data])")->check(CLI::ExistingFile);

  auto* teach = app.add_subcommand("teacher", "Save a frozen random teacher");
  teach->add_option("--config", config, "Run config")->check(CLI::ExistingFile);
  teach->add_option("--out", out, "Checkpoint path")->required();

  auto* init = app.add_subcommand("init-generator", "Fit the generator to the teacher's patch embedding");
  init->add_option("--teacher", teacher, "Teacher checkpoint");
  init->add_flag("--random-teacher", random_teacher, "Use the seeded random teacher");
  init->add_option("--config", config, "Run config")->check(CLI::ExistingFile);
  init->add_option("--out", out, "Generator checkpoint path")->required();
  init->add_option("--steps", steps, "Override [optim] init_steps");

  auto* pre = app.add_subcommand("pretrain", "Masked reconstruction plus distillation pretraining");
  pre->add_option("--data", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--config", config, "Run config")->check(CLI::ExistingFile);
  pre->add_option("--init-gen", init_gen, "Generator checkpoint")->check(CLI::ExistingFile);
  pre->add_option("--teacher", teacher, "Teacher checkpoint")->check(CLI::ExistingFile);
  pre->add_option("--out", out, "Output directory")->required();
  pre->add_option("--resume", resume, "Resume from an epoch checkpoint")->check(CLI::ExistingFile);
  pre->add_option("--stop-after-epoch", stop_after, "Stop after this many epochs");

  auto* probe = app.add_subcommand("probe", "Linear probe on frozen encoder features");
  probe->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("--train", train_m, "Training manifest")->required()->check(CLI::ExistingFile);
  probe->add_option("--val", val_m, "Validation manifest")->required()->check(CLI::ExistingFile);
  probe->add_option("--out", out, "Output directory")->required();
  probe->add_option("--config", config, "Run config ([optim] probe_* keys)")->check(CLI::ExistingFile);
  probe->add_flag("--baseline-random", baseline, "Also probe a randomly initialized encoder");

  auto* exp = app.add_subcommand("export", "Write pooled embeddings of a dataset");
  exp->add_option("--ckpt", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  exp->add_option("--data", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out, "Embedding file")->required();

  auto* ver = app.add_subcommand("verify", "Run the invariant suite");
  ver->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));
  ver->add_flag("--inject-fault", inject_fault, "Corrupt gradients to exercise the checker");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(out, per_modality, classes, size, seed, modalities, config, *synth);
    if (*teach) return cmd_teacher(config, out);
    if (*init) return cmd_init_generator(teacher, random_teacher, config, out, steps);
    if (*pre) return cmd_pretrain(manifest, config, init_gen, teacher, out, resume, stop_after);
    if (*probe) return cmd_probe(ckpt, train_m, val_m, out, baseline, config);
    if (*exp) return cmd_export(ckpt, manifest, out);
    if (*ver) return cmd_verify(level, inject_fault);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const train::ConfigError& e) {
    // A bad config file is a usage problem, same as a bad flag.
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
