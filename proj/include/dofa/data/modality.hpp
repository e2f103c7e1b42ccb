// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dofa/losses.hpp"
#include "dofa/nn/tensor.hpp"
#include "dofa/wavelengths.hpp"

namespace dofa::data {

struct ModalitySpec {
  std::string name;
  Wavelengths wavelengths;
  /// Channel indices of red, green, blue.
  std::optional<std::array<std::size_t, 3>> rgb_indices;
  bool is_sar = false;
  /// Per-channel normalization constants for raw sensor values.
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t channels() const { return wavelengths.size(); }
  ProxyRule proxy_rule() const { return ProxyRule{rgb_indices, is_sar}; }
  /// Throws std::invalid_argument when the metadata is inconsistent.
  void validate() const;
};

/// Sentinel-1, Sentinel-2, Gaofen, NAIP and EnMAP stand-ins, in that order.
/// Wavelengths are stored at float32 precision so that they survive the
/// raster format unchanged.
const std::vector<ModalitySpec>& builtin_modalities();

/// Throws std::out_of_range for unknown names.
const ModalitySpec& find_modality(const std::string& name);

struct SpectralImage {
  nn::Tensor<float> data;  // [C, H, W], normalized
  Wavelengths wavelengths;
  std::string modality;
  std::optional<int> label;

  std::size_t channels() const { return data.dim(0); }
  void validate() const;
};

}  // namespace dofa::data
