// SPDX-License-Identifier: Apache-2.0

#include "dofa/data/raster.hpp"

#include <limits>

#include "dofa/io/bytes.hpp"

namespace dofa::data {

using Kind = RasterError::Kind;

namespace {
constexpr char kMagic[4] = {'D', 'O', 'F', 'A'};
constexpr std::size_t kFixedHeader = 4 + 2 + 1 + 4 * 3 + 4;
}  // namespace

std::vector<std::uint8_t> encode_raster_bytes(const RasterHeader& header, std::span<const float> payload,
                                              std::span<const std::uint8_t> extra) {
  const std::uint64_t n = std::uint64_t{header.channels} * header.height * header.width;
  if (header.wavelengths.size() != header.channels || payload.size() != n) {
    throw RasterError(Kind::kInvalidHeader, "raster header does not match payload size");
  }
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(kRasterVersion);
  w.u8(0);
  w.u32(header.channels);
  w.u32(header.height);
  w.u32(header.width);
  w.i32(header.label);
  w.f32s(header.wavelengths);
  w.f32s(payload);
  w.bytes().insert(w.bytes().end(), extra.begin(), extra.end());
  w.u32(io::crc32(w.bytes()));
  return std::move(w.bytes());
}

DecodedRaster decode_raster_bytes(std::span<const std::uint8_t> bytes, std::size_t extra_bytes) {
  if (bytes.size() < 4) throw RasterError(Kind::kTruncatedHeader, "truncated header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw RasterError(Kind::kBadMagic, "bad magic");
  if (bytes.size() < kFixedHeader) throw RasterError(Kind::kTruncatedHeader, "truncated header");
  io::ByteReader r(bytes.subspan(4));
  const auto version = r.u16();
  if (version != kRasterVersion) {
    throw RasterError(Kind::kUnsupportedVersion, "unsupported raster version " + std::to_string(version));
  }
  const auto dtype = r.u8();
  if (dtype != 0) throw RasterError(Kind::kUnknownDtype, "unknown dtype code " + std::to_string(dtype));
  DecodedRaster out;
  auto& h = out.header;
  h.channels = r.u32();
  h.height = r.u32();
  h.width = r.u32();
  h.label = r.i32();
  if (h.channels == 0 || h.height == 0 || h.width == 0) {
    throw RasterError(Kind::kInvalidHeader, "raster header has a zero dimension");
  }
  const std::uint64_t n = std::uint64_t{h.channels} * h.height * h.width;
  const std::uint64_t body = (std::uint64_t{h.channels} + n) * 4 + extra_bytes + 4;
  if (r.remaining() < body) throw RasterError(Kind::kTruncatedPayload, "truncated payload");
  if (r.remaining() > body) throw RasterError(Kind::kTrailingBytes, "trailing bytes after payload");
  const std::size_t crc_at = bytes.size() - 4;
  const std::uint32_t expected = io::crc32(bytes.first(crc_at));
  io::ByteReader tail(bytes.subspan(crc_at));
  if (tail.u32() != expected) throw RasterError(Kind::kBadCrc, "bad CRC");

  h.wavelengths.resize(h.channels);
  r.f32s(h.wavelengths);
  out.payload.resize(static_cast<std::size_t>(n));
  r.f32s(out.payload);
  const auto extra = bytes.subspan(r.position() + 4, extra_bytes);
  out.extra.assign(extra.begin(), extra.end());
  return out;
}

std::vector<std::uint8_t> encode_raster(const SpectralImage& img) {
  img.validate();
  RasterHeader h;
  h.channels = static_cast<std::uint32_t>(img.data.dim(0));
  h.height = static_cast<std::uint32_t>(img.data.dim(1));
  h.width = static_cast<std::uint32_t>(img.data.dim(2));
  h.label = img.label.value_or(-1);
  if (img.label && *img.label < 0) throw RasterError(Kind::kInvalidHeader, "labels must be non-negative");
  for (double l : img.wavelengths.values()) h.wavelengths.push_back(static_cast<float>(l));
  return encode_raster_bytes(h, img.data.data());
}

SpectralImage decode_raster(std::span<const std::uint8_t> bytes) {
  auto raw = decode_raster_bytes(bytes);
  const auto& h = raw.header;
  std::vector<double> lambdas(h.wavelengths.begin(), h.wavelengths.end());
  SpectralImage img{nn::Tensor<float>({h.channels, h.height, h.width}, std::move(raw.payload)),
                    Wavelengths(std::move(lambdas)), "", std::nullopt};
  if (h.label >= 0) img.label = h.label;
  return img;
}

void write_raster(const std::filesystem::path& path, const SpectralImage& img) {
  const auto bytes = encode_raster(img);
  try {
    io::write_file(path, bytes);
  } catch (const std::runtime_error& e) {
    throw RasterError(Kind::kIo, e.what());
  }
}

SpectralImage read_raster(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw RasterError(Kind::kIo, e.what());
  }
  try {
    return decode_raster(bytes);
  } catch (const RasterError& e) {
    throw RasterError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace dofa::data
