// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/checkpoint.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <sstream>

#include "dofa/io/bytes.hpp"
#include "dofa/train/run_config.hpp"

namespace dofa::train {

using Kind = CheckpointError::Kind;
namespace pt = boost::property_tree;

namespace {

constexpr char kMagic[4] = {'D', 'O', 'F', 'C'};

const char* kind_name(CheckpointKind k) {
  switch (k) {
    case CheckpointKind::kModel: return "model";
    case CheckpointKind::kTeacher: return "teacher";
    case CheckpointKind::kGenerator: return "generator";
  }
  return "?";
}

std::string config_text(const Checkpoint& c) {
  std::ostringstream out;
  out << "[checkpoint]\nkind = " << kind_name(c.kind) << "\n\n";
  out << model_section(c.model) << "\n" << optim_section(c.optim) << "\n";
  out << "[state]\nstep = " << c.state.step << "\nepoch = " << c.state.epoch << "\n\n[history]\n";
  for (std::size_t i = 0; i < c.state.history.size(); ++i) {
    const auto& r = c.state.history[i];
    out << i << " = " << r.step << ' ' << format_double(r.lr) << ' ' << format_double(r.recon) << ' '
        << format_double(r.distill) << ' ' << format_double(r.total) << '\n';
  }
  return out.str();
}

void parse_config_text(const std::string& text, Checkpoint& c) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
    const auto kind = tree.get<std::string>("checkpoint.kind");
    if (kind == "model") {
      c.kind = CheckpointKind::kModel;
    } else if (kind == "teacher") {
      c.kind = CheckpointKind::kTeacher;
    } else if (kind == "generator") {
      c.kind = CheckpointKind::kGenerator;
    } else {
      throw CheckpointError(Kind::kMalformed, "unknown checkpoint kind '" + kind + "'");
    }
    c.model = parse_model_section(text, "checkpoint config");
    c.optim = parse_optim_section(text, "checkpoint config");
    c.state.step = tree.get<std::uint64_t>("state.step");
    c.state.epoch = tree.get<std::size_t>("state.epoch");
    if (auto hist = tree.get_child_optional("history")) {
      for (const auto& [key, node] : *hist) {
        std::istringstream fields(node.data());
        std::string lr, recon, distill, total;
        MetricRecord r;
        if (!(fields >> r.step >> lr >> recon >> distill >> total)) {
          throw CheckpointError(Kind::kMalformed, "bad history record " + key);
        }
        r.lr = parse_double(lr, "history");
        r.recon = parse_double(recon, "history");
        r.distill = parse_double(distill, "history");
        r.total = parse_double(total, "history");
        c.state.history.push_back(r);
      }
    }
  } catch (const pt::ptree_error& e) {
    throw CheckpointError(Kind::kMalformed, std::string("checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kMalformed, e.what());
  }
}

void write_table(io::ByteWriter& w, const std::vector<NamedTensor>& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& t : table) {
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.value.data());
  }
}

std::vector<NamedTensor> read_table(io::ByteReader& r) {
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto rank = r.u8();
    if (rank == 0) throw CheckpointError(Kind::kMalformed, "tensor '" + t.name + "' has rank 0");
    nn::Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      shape.push_back(r.u32());
      if (shape.back() == 0) throw CheckpointError(Kind::kMalformed, "tensor '" + t.name + "' has a zero dim");
      n *= shape.back();
    }
    if (n * 4 > r.remaining()) throw std::out_of_range("payload");
    std::vector<float> values(static_cast<std::size_t>(n));
    r.f32s(values);
    t.value = nn::Tensor<float>(std::move(shape), std::move(values));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(kCheckpointVersion);
  w.str(config_text(ckpt));
  write_table(w, ckpt.params);
  write_table(w, ckpt.optimizer);
  w.u32(io::crc32(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw CheckpointError(Kind::kTruncated, "truncated checkpoint");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw CheckpointError(Kind::kBadMagic, "bad magic");
  if (bytes.size() < 6 + 4) throw CheckpointError(Kind::kTruncated, "truncated checkpoint");
  io::ByteReader head(bytes.subspan(4, 2));
  const auto version = head.u16();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kUnsupportedVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  // Structure first, so that a cut-off file reports truncation rather than
  // a checksum mismatch.
  const auto body = bytes.subspan(6, bytes.size() - 6);
  Checkpoint c;
  std::string text;
  std::size_t consumed = 0;
  try {
    io::ByteReader r(body);
    text = r.str();
    c.params = read_table(r);
    c.optimizer = read_table(r);
    consumed = r.position();
  } catch (const std::out_of_range&) {
    throw CheckpointError(Kind::kTruncated, "truncated checkpoint");
  }
  if (body.size() - consumed < 4) throw CheckpointError(Kind::kTruncated, "truncated checkpoint");
  if (body.size() - consumed > 4) throw CheckpointError(Kind::kMalformed, "trailing bytes after checkpoint");
  io::ByteReader tail(bytes.last(4));
  if (tail.u32() != io::crc32(bytes.first(bytes.size() - 4))) throw CheckpointError(Kind::kBadCrc, "bad CRC");
  parse_config_text(text, c);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write then rename so that an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  try {
    io::write_file(tmp, bytes);
    std::filesystem::rename(tmp, path);
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::kIo, e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(Kind::kIo, e.what());
  }
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path.string() + ": " + e.what());
  }
}

template <typename T>
std::vector<NamedTensor> snapshot(const nn::ParameterList<T>& params) {
  std::vector<NamedTensor> out;
  for (const auto* p : params) out.push_back({p->name(), p->value().template cast<float>()});
  return out;
}

template <typename T>
void restore(const std::vector<NamedTensor>& tensors, const nn::ParameterList<T>& params, bool require_all) {
  std::vector<bool> covered(params.size(), false);
  for (const auto& t : tensors) {
    auto it = std::find_if(params.begin(), params.end(), [&](const auto* p) { return p->name() == t.name; });
    if (it == params.end()) throw CheckpointError(Kind::kMismatch, "checkpoint tensor '" + t.name + "' has no parameter");
    auto* p = *it;
    if (p->shape() != t.value.shape()) {
      throw CheckpointError(Kind::kMismatch, "shape mismatch for '" + t.name + "': checkpoint " +
                                                 nn::to_string(t.value.shape()) + ", model " +
                                                 nn::to_string(p->shape()));
    }
    p->value() = t.value.template cast<T>();
    covered[static_cast<std::size_t>(it - params.begin())] = true;
  }
  if (require_all) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!covered[i]) throw CheckpointError(Kind::kMismatch, "checkpoint lacks parameter '" + params[i]->name() + "'");
    }
  }
}

std::vector<NamedTensor> snapshot_optimizer(AdamW<float>& opt) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    out.push_back({"m:" + opt.params()[i]->name(), opt.first_moments()[i]});
    out.push_back({"v:" + opt.params()[i]->name(), opt.second_moments()[i]});
  }
  return out;
}

void restore_optimizer(const std::vector<NamedTensor>& tensors, AdamW<float>& opt) {
  const auto& params = opt.params();
  if (tensors.size() != 2 * params.size()) {
    throw CheckpointError(Kind::kMismatch, "optimizer table has " + std::to_string(tensors.size()) +
                                               " entries, expected " + std::to_string(2 * params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = tensors[2 * i];
    const auto& v = tensors[2 * i + 1];
    if (m.name != "m:" + params[i]->name() || v.name != "v:" + params[i]->name() ||
        m.value.shape() != params[i]->shape() || v.value.shape() != params[i]->shape()) {
      throw CheckpointError(Kind::kMismatch, "optimizer state does not match parameter '" + params[i]->name() + "'");
    }
    opt.first_moments()[i] = m.value;
    opt.second_moments()[i] = v.value;
  }
}

Checkpoint model_checkpoint(DofaModel<float>& model) {
  Checkpoint c;
  c.kind = CheckpointKind::kModel;
  c.model = model.config;
  c.params = snapshot(model.parameters());
  return c;
}

DofaModel<float> load_model(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::kModel) {
    throw CheckpointError(Kind::kMismatch, "expected a model checkpoint");
  }
  try {
    ckpt.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::kMalformed, e.what());
  }
  DofaModel<float> model(ckpt.model);
  restore(ckpt.params, model.parameters());
  return model;
}

template std::vector<NamedTensor> snapshot(const nn::ParameterList<float>&);
template std::vector<NamedTensor> snapshot(const nn::ParameterList<double>&);
template void restore(const std::vector<NamedTensor>&, const nn::ParameterList<float>&, bool);
template void restore(const std::vector<NamedTensor>&, const nn::ParameterList<double>&, bool);

}  // namespace dofa::train
