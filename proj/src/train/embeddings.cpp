// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/embeddings.hpp"

#include "dofa/data/raster.hpp"
#include "dofa/io/bytes.hpp"
#include "dofa/train/probe.hpp"

namespace dofa::train {

EmbeddingTable compute_embeddings(const DofaModel<float>& model, const data::Dataset& ds) {
  EmbeddingTable t{extract_features(model, ds), {}};
  for (const auto& img : ds.images) t.labels.push_back(img.label.value_or(-1));
  return t;
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table) {
  if (table.features.rank() != 2 || table.features.dim(0) != table.labels.size()) {
    throw std::invalid_argument("embedding table needs [N, D] features and N labels");
  }
  data::RasterHeader h;
  h.channels = 1;
  h.height = static_cast<std::uint32_t>(table.features.dim(0));
  h.width = static_cast<std::uint32_t>(table.features.dim(1));
  h.wavelengths = {0.0f};
  io::ByteWriter labels;
  for (int l : table.labels) labels.i32(l);
  return data::encode_raster_bytes(h, table.features.data(), labels.bytes());
}

EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 1 + 4 + 4) throw data::RasterError(data::RasterError::Kind::kTruncatedHeader, "truncated header");
  // The label block length depends on H, which sits at offset 11.
  io::ByteReader peek(bytes.subspan(11, 4));
  const auto n = peek.u32();
  auto raw = data::decode_raster_bytes(bytes, std::size_t{n} * 4);
  if (raw.header.channels != 1) {
    throw data::RasterError(data::RasterError::Kind::kInvalidHeader, "embedding file must have C = 1");
  }
  EmbeddingTable t{nn::Tensor<float>({raw.header.height, raw.header.width}, std::move(raw.payload)), {}};
  io::ByteReader r(raw.extra);
  for (std::uint32_t i = 0; i < n; ++i) t.labels.push_back(r.i32());
  return t;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  io::write_file(path, encode_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) { return decode_embeddings(io::read_file(path)); }

}  // namespace dofa::train
