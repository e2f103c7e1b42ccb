// SPDX-License-Identifier: Apache-2.0

#include "dofa/data/modality.hpp"

#include <cmath>
#include <stdexcept>

namespace dofa::data {

void ModalitySpec::validate() const {
  const std::size_t c = wavelengths.size();
  if (c == 0) throw std::invalid_argument(name + ": no channels");
  if (mean.size() != c || stddev.size() != c) throw std::invalid_argument(name + ": normalization table size");
  if (rgb_indices) {
    for (auto i : *rgb_indices) {
      if (i >= c) throw std::invalid_argument(name + ": RGB index out of range");
    }
  }
  if (c != 3 && rgb_indices.has_value() == is_sar) {
    throw std::invalid_argument(name + ": exactly one of RGB bands or SAR must be declared");
  }
  for (double s : stddev) {
    if (!(s > 0.0)) throw std::invalid_argument(name + ": stddev must be positive");
  }
}

namespace {

std::vector<double> float_rounded(std::vector<double> v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

// Optical stand-in statistics: reflectance-like mean rising slowly with
// wavelength, constant spread.
ModalitySpec optical(std::string name, std::vector<double> lambdas, std::array<std::size_t, 3> rgb) {
  ModalitySpec spec;
  spec.name = std::move(name);
  spec.wavelengths = Wavelengths(float_rounded(std::move(lambdas)));
  spec.rgb_indices = rgb;
  for (double l : spec.wavelengths.values()) {
    spec.mean.push_back(0.1 + 0.05 * l);
    spec.stddev.push_back(0.05);
  }
  return spec;
}

std::size_t nearest(const std::vector<double>& lambdas, double target) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < lambdas.size(); ++i) {
    if (std::abs(lambdas[i] - target) < std::abs(lambdas[best] - target)) best = i;
  }
  return best;
}

std::vector<ModalitySpec> make_builtins() {
  std::vector<ModalitySpec> out;

  ModalitySpec s1;
  s1.name = "sentinel1";
  s1.wavelengths = Wavelengths{kSarWavelength, kSarWavelength};  // vv, vh
  s1.is_sar = true;
  s1.mean = {-12.0, -19.0};  // backscatter, dB
  s1.stddev = {5.0, 5.0};
  out.push_back(std::move(s1));

  // B2, B3, B4, B5, B6, B7, B8, B11, B12 centers.
  out.push_back(optical("sentinel2", {0.49, 0.56, 0.665, 0.705, 0.74, 0.783, 0.842, 1.61, 2.19}, {2, 1, 0}));
  // Blue, green, red, NIR.
  out.push_back(optical("gaofen", {0.485, 0.555, 0.66, 0.83}, {2, 1, 0}));
  out.push_back(optical("naip", {0.64, 0.56, 0.48}, {0, 1, 2}));

  std::vector<double> enmap(202);
  for (std::size_t i = 0; i < enmap.size(); ++i) {
    enmap[i] = 0.42 + (2.45 - 0.42) * static_cast<double>(i) / static_cast<double>(enmap.size() - 1);
  }
  const std::array<std::size_t, 3> rgb{nearest(enmap, 0.64), nearest(enmap, 0.56), nearest(enmap, 0.48)};
  out.push_back(optical("enmap", std::move(enmap), rgb));

  for (const auto& spec : out) spec.validate();
  return out;
}

}  // namespace

const std::vector<ModalitySpec>& builtin_modalities() {
  static const std::vector<ModalitySpec> specs = make_builtins();
  return specs;
}

const ModalitySpec& find_modality(const std::string& name) {
  for (const auto& spec : builtin_modalities()) {
    if (spec.name == name) return spec;
  }
  throw std::out_of_range("unknown modality '" + name + "'");
}

void SpectralImage::validate() const {
  if (data.rank() != 3) throw nn::ShapeError("spectral image must be [C, H, W]");
  if (data.dim(0) != wavelengths.size()) {
    throw WavelengthError("image has " + std::to_string(data.dim(0)) + " channels and " +
                          std::to_string(wavelengths.size()) + " wavelengths");
  }
  if (!nn::all_finite(data)) throw std::invalid_argument("spectral image contains non-finite values");
}

}  // namespace dofa::data
