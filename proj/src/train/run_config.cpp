// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dofa::train {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("cannot format number");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError(what + ": not a number: '" + s + "'");
  return v;
}

namespace {

template <typename U>
U parse_unsigned(const std::string& s, const std::string& what) {
  U v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError(what + ": not an integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(what + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename V>
std::string join(const std::vector<V>& items, std::function<std::string(const V&)> fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

/// Key table binding a struct's fields to text.
template <typename S>
struct Field {
  std::string key;
  std::function<std::string(const S&)> get;
  std::function<void(S&, const std::string&, const std::string&)> set;
};

template <typename S, typename M>
Field<S> size_field(std::string key, M S::*member) {
  return {key, [member](const S& s) { return std::to_string(s.*member); },
          [member](S& s, const std::string& v, const std::string& what) { s.*member = parse_unsigned<M>(v, what); }};
}

template <typename S>
Field<S> double_field(std::string key, double S::*member) {
  return {key, [member](const S& s) { return format_double(s.*member); },
          [member](S& s, const std::string& v, const std::string& what) { s.*member = parse_double(v, what); }};
}

template <typename S>
Field<S> string_field(std::string key, std::string S::*member) {
  return {key, [member](const S& s) { return s.*member; },
          [member](S& s, const std::string& v, const std::string&) { s.*member = v; }};
}

const std::vector<Field<ModelConfig>>& model_fields() {
  using M = ModelConfig;
  static const std::vector<Field<M>> f{
      size_field("patch_size", &M::patch_size),
      size_field("image_size", &M::image_size),
      size_field("embed_dim", &M::embed_dim),
      size_field("depth", &M::depth),
      size_field("num_heads", &M::num_heads),
      double_field("mlp_ratio", &M::mlp_ratio),
      size_field("decoder_dim", &M::decoder_dim),
      size_field("decoder_depth", &M::decoder_depth),
      size_field("decoder_heads", &M::decoder_heads),
      size_field("wave_dim", &M::wave_dim),
      size_field("num_weight_tokens", &M::num_weight_tokens),
      double_field("mask_ratio", &M::mask_ratio),
      size_field("teacher_dim", &M::teacher_dim),
      size_field("teacher_depth", &M::teacher_depth),
      size_field("teacher_heads", &M::teacher_heads),
      {"recon_on_all_patches", [](const M& m) { return std::string(m.recon_on_all_patches ? "true" : "false"); },
       [](M& m, const std::string& v, const std::string& w) { m.recon_on_all_patches = parse_bool(v, w); }},
      size_field("init_seed", &M::init_seed),
  };
  return f;
}

// [optim] carries the optimizer plus the generator-init and probe settings.
struct OptimSection {
  OptimConfig optim;
  InitGenConfig init_gen;
  ProbeConfig probe;
};

const std::vector<Field<OptimSection>>& optim_fields() {
  using O = OptimSection;
  auto of = [](std::string key, auto member) {
    return Field<O>{key, [member](const O& o) { return format_double(o.optim.*member); },
                    [member](O& o, const std::string& v, const std::string& w) { o.optim.*member = parse_double(v, w); }};
  };
  auto os = [](std::string key, auto member) {
    return Field<O>{key, [member](const O& o) { return std::to_string(o.optim.*member); },
                    [member](O& o, const std::string& v, const std::string& w) {
                      o.optim.*member = parse_unsigned<std::remove_reference_t<decltype(o.optim.*member)>>(v, w);
                    }};
  };
  static const std::vector<Field<O>> f{
      of("base_lr", &OptimConfig::base_lr),
      of("weight_decay", &OptimConfig::weight_decay),
      of("beta1", &OptimConfig::beta1),
      of("beta2", &OptimConfig::beta2),
      of("eps", &OptimConfig::eps),
      os("warmup_epochs", &OptimConfig::warmup_epochs),
      os("total_epochs", &OptimConfig::total_epochs),
      os("batch_size", &OptimConfig::batch_size),
      os("seed", &OptimConfig::seed),
      {"init_steps", [](const O& o) { return std::to_string(o.init_gen.steps); },
       [](O& o, const std::string& v, const std::string& w) { o.init_gen.steps = parse_unsigned<std::size_t>(v, w); }},
      {"init_lr", [](const O& o) { return format_double(o.init_gen.lr); },
       [](O& o, const std::string& v, const std::string& w) { o.init_gen.lr = parse_double(v, w); }},
      {"probe_epochs", [](const O& o) { return std::to_string(o.probe.epochs); },
       [](O& o, const std::string& v, const std::string& w) { o.probe.epochs = parse_unsigned<std::size_t>(v, w); }},
      {"probe_lrs", [](const O& o) { return join<double>(o.probe.lrs, format_double); },
       [](O& o, const std::string& v, const std::string& w) {
         o.probe.lrs.clear();
         for (const auto& item : split_list(v)) o.probe.lrs.push_back(parse_double(item, w));
         if (o.probe.lrs.empty()) throw ConfigError(w + ": empty list");
       }},
      {"probe_momentum", [](const O& o) { return format_double(o.probe.momentum); },
       [](O& o, const std::string& v, const std::string& w) { o.probe.momentum = parse_double(v, w); }},
      {"probe_batch_size", [](const O& o) { return std::to_string(o.probe.batch_size); },
       [](O& o, const std::string& v, const std::string& w) { o.probe.batch_size = parse_unsigned<std::size_t>(v, w); }},
  };
  return f;
}

const std::vector<Field<DataConfig>>& data_fields() {
  using D = DataConfig;
  static const std::vector<Field<D>> f{
      string_field("manifest", &D::manifest),
      string_field("train_manifest", &D::train_manifest),
      string_field("val_manifest", &D::val_manifest),
      size_field("per_modality", &D::per_modality),
      {"classes", [](const D& d) { return std::to_string(d.classes); },
       [](D& d, const std::string& v, const std::string& w) {
         d.classes = static_cast<int>(parse_unsigned<unsigned>(v, w));
       }},
      size_field("seed", &D::seed),
      {"modalities", [](const D& d) { return join<std::string>(d.modalities, [](const std::string& s) { return s; }); },
       [](D& d, const std::string& v, const std::string&) { d.modalities = split_list(v); }},
      {"field_amplitude", [](const D& d) { return format_double(d.synth.field_amplitude); },
       [](D& d, const std::string& v, const std::string& w) { d.synth.field_amplitude = parse_double(v, w); }},
      {"field_waves", [](const D& d) { return std::to_string(d.synth.field_waves); },
       [](D& d, const std::string& v, const std::string& w) { d.synth.field_waves = parse_unsigned<std::size_t>(v, w); }},
      {"noise_std", [](const D& d) { return format_double(d.synth.noise_std); },
       [](D& d, const std::string& v, const std::string& w) { d.synth.noise_std = parse_double(v, w); }},
      {"offset_jitter", [](const D& d) { return format_double(d.synth.offset_jitter); },
       [](D& d, const std::string& v, const std::string& w) { d.synth.offset_jitter = parse_double(v, w); }},
  };
  return f;
}

const std::vector<Field<PathsConfig>>& paths_fields() {
  using P = PathsConfig;
  static const std::vector<Field<P>> f{
      string_field("out", &P::out),
      string_field("teacher", &P::teacher),
      string_field("init_gen", &P::init_gen),
      string_field("checkpoint", &P::checkpoint),
  };
  return f;
}

template <typename S>
std::string emit(const std::string& section, const S& s, const std::vector<Field<S>>& fields) {
  std::string out = "[" + section + "]\n";
  for (const auto& f : fields) out += f.key + " = " + f.get(s) + "\n";
  return out;
}

template <typename S>
void apply(const pt::ptree& tree, const std::string& section, const std::string& origin, S& s,
           const std::vector<Field<S>>& fields) {
  for (const auto& [key, node] : tree) {
    const std::string what = origin + ": [" + section + "] " + key;
    if (!node.empty()) throw ConfigError(what + ": nested keys are not allowed");
    auto it = std::find_if(fields.begin(), fields.end(), [&](const Field<S>& f) { return f.key == key; });
    if (it == fields.end()) throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
    it->set(s, node.data(), what);
  }
}

pt::ptree parse_ini(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [name, section] : tree) {
    if (section.empty() && !section.data().empty()) {
      throw ConfigError(origin + ": key '" + name + "' outside any section");
    }
  }
  return tree;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin, RunConfig base) {
  const auto tree = parse_ini(text, origin);
  OptimSection optim{base.optim, base.init_gen, base.probe};
  for (const auto& [name, section] : tree) {
    if (name == "model") {
      apply(section, name, origin, base.model, model_fields());
    } else if (name == "optim") {
      apply(section, name, origin, optim, optim_fields());
    } else if (name == "data") {
      apply(section, name, origin, base.data, data_fields());
    } else if (name == "paths") {
      apply(section, name, origin, base.paths, paths_fields());
    } else {
      throw ConfigError(origin + ": unknown section [" + name + "]");
    }
  }
  base.optim = optim.optim;
  base.init_gen = optim.init_gen;
  base.probe = optim.probe;
  try {
    base.model.validate();
    base.optim.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (base.probe.lrs.empty() || base.probe.epochs == 0 || base.probe.batch_size == 0) {
    throw ConfigError(origin + ": probe settings must be non-empty and positive");
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string(), std::move(base));
}

std::string to_ini(const RunConfig& cfg) {
  const OptimSection optim{cfg.optim, cfg.init_gen, cfg.probe};
  return emit("model", cfg.model, model_fields()) + "\n" + emit("optim", optim, optim_fields()) + "\n" +
         emit("data", cfg.data, data_fields()) + "\n" + emit("paths", cfg.paths, paths_fields());
}

void write_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_ini(cfg);
  if (!out.flush()) throw ConfigError("write error on " + path.string());
}

std::string model_section(const ModelConfig& cfg) { return emit("model", cfg, model_fields()); }

std::string optim_section(const OptimConfig& cfg) {
  return emit("optim", OptimSection{cfg, {}, {}}, optim_fields());
}

ModelConfig parse_model_section(const std::string& text, const std::string& origin) {
  const auto tree = parse_ini(text, origin);
  ModelConfig cfg;
  if (auto section = tree.get_child_optional("model")) apply(*section, "model", origin, cfg, model_fields());
  return cfg;
}

OptimConfig parse_optim_section(const std::string& text, const std::string& origin) {
  const auto tree = parse_ini(text, origin);
  OptimSection s;
  if (auto section = tree.get_child_optional("optim")) apply(*section, "optim", origin, s, optim_fields());
  return s.optim;
}

}  // namespace dofa::train
