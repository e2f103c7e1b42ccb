// SPDX-License-Identifier: Apache-2.0

// Raster file layout (little-endian):
//   "DOFA" | u16 version | u8 dtype (0 = float32) | u32 C | u32 H | u32 W |
//   i32 label (-1 = none) | C x f32 wavelengths | C*H*W x f32 payload |
//   u32 CRC-32 of everything before it

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "dofa/data/modality.hpp"

namespace dofa::data {

inline constexpr std::uint16_t kRasterVersion = 1;

class RasterError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kUnsupportedVersion, kUnknownDtype, kTruncatedHeader, kTruncatedPayload, kBadCrc, kTrailingBytes, kInvalidHeader };
  RasterError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Header fields as stored; `wavelengths` holds C entries.
struct RasterHeader {
  std::uint32_t channels = 0, height = 0, width = 0;
  std::int32_t label = -1;
  std::vector<float> wavelengths;
};

/// Serializes header + payload + CRC. `payload` must hold C*H*W values.
std::vector<std::uint8_t> encode_raster_bytes(const RasterHeader& header, std::span<const float> payload,
                                              std::span<const std::uint8_t> extra = {});

struct DecodedRaster {
  RasterHeader header;
  std::vector<float> payload;
  std::vector<std::uint8_t> extra;
};

/// Inverse of encode_raster_bytes. `extra_bytes` is the length of the block
/// stored between payload and CRC (zero for images).
DecodedRaster decode_raster_bytes(std::span<const std::uint8_t> bytes, std::size_t extra_bytes = 0);

std::vector<std::uint8_t> encode_raster(const SpectralImage& img);
/// The modality name is not stored in the file; the result leaves it empty.
SpectralImage decode_raster(std::span<const std::uint8_t> bytes);

void write_raster(const std::filesystem::path& path, const SpectralImage& img);
SpectralImage read_raster(const std::filesystem::path& path);

}  // namespace dofa::data
