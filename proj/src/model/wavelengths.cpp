// SPDX-License-Identifier: Apache-2.0

#include "dofa/wavelengths.hpp"

#include <cmath>
#include <string>

namespace dofa {

Wavelengths::Wavelengths(std::vector<double> micrometers) : values_(std::move(micrometers)) {
  if (values_.empty()) throw WavelengthError("wavelength list is empty");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] <= 0.0) {
      throw WavelengthError("wavelength " + std::to_string(i) + " must be finite and positive, got " +
                            std::to_string(values_[i]));
    }
  }
}

Wavelengths Wavelengths::permuted(std::span<const std::size_t> order) const {
  if (order.size() != values_.size()) throw WavelengthError("permutation length differs from channel count");
  std::vector<double> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(values_.at(i));
  return Wavelengths(std::move(out));
}

const Wavelengths& rgb_wavelengths() {
  static const Wavelengths rgb{0.64, 0.56, 0.48};
  return rgb;
}

}  // namespace dofa
