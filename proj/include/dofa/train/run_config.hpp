// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dofa/data/synth.hpp"
#include "dofa/model.hpp"
#include "dofa/train/optim.hpp"

namespace dofa::train {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string manifest;
  std::string train_manifest;
  std::string val_manifest;
  /// Synthesis settings.
  std::size_t per_modality = 100;
  int classes = 10;
  std::uint64_t seed = 0;
  /// Empty means every built-in modality.
  std::vector<std::string> modalities;
  data::SynthOptions synth;
};

struct PathsConfig {
  std::string out;
  std::string teacher;
  std::string init_gen;
  std::string checkpoint;
};

struct InitGenConfig {
  std::size_t steps = 200;
  double lr = 1e-3;
};

struct ProbeConfig {
  std::size_t epochs = 50;
  std::vector<double> lrs{0.01, 0.1, 1.0};
  double momentum = 0.9;
  std::size_t batch_size = 32;
};

struct RunConfig {
  ModelConfig model;
  OptimConfig optim = OptimConfig::desk();
  InitGenConfig init_gen;
  ProbeConfig probe;
  DataConfig data;
  PathsConfig paths;
};

/// Parses INI text with sections [model], [optim], [data], [paths]. Unknown
/// sections or keys and unparsable values throw ConfigError naming `origin`.
/// Keys that are absent keep the values already in `base`.
RunConfig parse_run_config(const std::string& text, const std::string& origin, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Every field, fully resolved; parse_run_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& cfg);
void write_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Single-section helpers used by the checkpoint format.
std::string model_section(const ModelConfig& cfg);
std::string optim_section(const OptimConfig& cfg);
ModelConfig parse_model_section(const std::string& text, const std::string& origin);
OptimConfig parse_optim_section(const std::string& text, const std::string& origin);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& what);

}  // namespace dofa::train
