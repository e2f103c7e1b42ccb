// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dofa/data/modality.hpp"

namespace dofa::data {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One manifest line: `path<TAB>modality<TAB>label`; label -1 means none.
struct ManifestEntry {
  std::string path;  // as written, relative to the manifest directory
  std::string modality;
  int label = -1;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

struct Dataset {
  std::vector<SpectralImage> images;
  /// Manifest path of each image, for diagnostics.
  std::vector<std::string> ids;

  std::size_t size() const { return images.size(); }
};

/// Loads every raster listed in `manifest`. Modalities must be built in and
/// the file contents (channels, wavelengths, label) must agree with the
/// manifest line; violations throw ManifestError naming the line.
Dataset load_dataset(const std::filesystem::path& manifest);

struct Batch {
  std::string modality;
  std::vector<std::size_t> indices;
};

/// Groups images by modality, shuffles each group with `shuffle_seed`, cuts
/// it into batches (the last one may be partial) and interleaves the groups
/// round-robin in order of first appearance. Throws std::invalid_argument
/// if one modality holds images with different channel counts.
std::vector<Batch> batch_iter(const std::vector<SpectralImage>& images, std::size_t batch_size,
                              std::uint64_t shuffle_seed);

/// Throws std::invalid_argument unless every listed image has the same
/// channel count.
void check_batch(const std::vector<SpectralImage>& images, const Batch& batch);

}  // namespace dofa::data
