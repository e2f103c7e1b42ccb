// SPDX-License-Identifier: Apache-2.0

// Embedding files reuse the raster layout with C = 1, H = number of samples,
// W = embedding width and a single wavelength entry of 0. The payload is the
// [N, D] matrix; N int32 labels (-1 = none) follow it, before the CRC.

#pragma once

#include <filesystem>
#include <vector>

#include "dofa/data/dataset.hpp"

namespace dofa::train {

struct EmbeddingTable {
  nn::Tensor<float> features;  // [N, D]
  std::vector<int> labels;
};

EmbeddingTable compute_embeddings(const DofaModel<float>& model, const data::Dataset& ds);

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table);
EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes);

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace dofa::train
