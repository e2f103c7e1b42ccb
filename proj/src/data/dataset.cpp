// SPDX-License-Identifier: Apache-2.0

#include "dofa/data/dataset.hpp"

#include <charconv>
#include <fstream>
#include <numeric>

#include "dofa/data/raster.hpp"
#include "dofa/nn/rng.hpp"

namespace dofa::data {

namespace fs = std::filesystem;

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ManifestError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = manifest.string() + ":" + std::to_string(lineno) + ": ";
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw ManifestError(where + "expected path<TAB>modality<TAB>label");
    }
    ManifestEntry e{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), -1};
    const auto label = std::string_view(line).substr(t2 + 1);
    const auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), e.label);
    if (ec != std::errc{} || ptr != label.data() + label.size() || e.label < -1) {
      throw ManifestError(where + "bad label '" + std::string(label) + "'");
    }
    if (e.path.empty() || e.modality.empty()) throw ManifestError(where + "empty field");
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const fs::path& manifest, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + manifest.string());
  for (const auto& e : entries) out << e.path << '\t' << e.modality << '\t' << e.label << '\n';
  out.flush();
  if (!out) throw ManifestError("write error on " + manifest.string());
}

Dataset load_dataset(const fs::path& manifest) {
  const auto entries = read_manifest(manifest);
  const auto root = manifest.parent_path();
  Dataset ds;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto where = manifest.string() + " entry " + std::to_string(i + 1) + " (" + e.path + "): ";
    const ModalitySpec* spec = nullptr;
    try {
      spec = &find_modality(e.modality);
    } catch (const std::out_of_range&) {
      throw ManifestError(where + "unknown modality '" + e.modality + "'");
    }
    SpectralImage img = read_raster(root / e.path);
    if (img.wavelengths != spec->wavelengths) {
      throw ManifestError(where + "wavelengths do not match modality " + e.modality);
    }
    if (img.label.value_or(-1) != e.label) throw ManifestError(where + "label differs from file header");
    img.modality = e.modality;
    ds.images.push_back(std::move(img));
    ds.ids.push_back(e.path);
  }
  return ds;
}

void check_batch(const std::vector<SpectralImage>& images, const Batch& batch) {
  if (batch.indices.empty()) throw std::invalid_argument("empty batch");
  const std::size_t c = images.at(batch.indices.front()).channels();
  for (auto i : batch.indices) {
    if (images.at(i).channels() != c) {
      throw std::invalid_argument("batch mixes channel counts " + std::to_string(c) + " and " +
                                  std::to_string(images[i].channels()));
    }
  }
}

std::vector<Batch> batch_iter(const std::vector<SpectralImage>& images, std::size_t batch_size,
                              std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto it = std::find(names.begin(), names.end(), images[i].modality);
    const auto g = static_cast<std::size_t>(it - names.begin());
    if (it == names.end()) {
      names.push_back(images[i].modality);
      groups.emplace_back();
    }
    groups[g].push_back(i);
  }

  std::vector<std::vector<Batch>> per_group(groups.size());
  std::size_t rounds = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    nn::Rng rng(nn::derive_seed(shuffle_seed, {g}));
    rng.shuffle(groups[g].begin(), groups[g].end());
    for (std::size_t start = 0; start < groups[g].size(); start += batch_size) {
      const auto end = std::min(start + batch_size, groups[g].size());
      Batch b{names[g], {groups[g].begin() + static_cast<std::ptrdiff_t>(start),
                         groups[g].begin() + static_cast<std::ptrdiff_t>(end)}};
      check_batch(images, b);
      per_group[g].push_back(std::move(b));
    }
    rounds = std::max(rounds, per_group[g].size());
  }

  std::vector<Batch> out;
  for (std::size_t r = 0; r < rounds; ++r) {
    for (auto& batches : per_group) {
      if (r < batches.size()) out.push_back(std::move(batches[r]));
    }
  }
  return out;
}

}  // namespace dofa::data
