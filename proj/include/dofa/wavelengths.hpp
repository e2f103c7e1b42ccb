// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace dofa {

/// Radar channels carry this stand-in center wavelength (micrometers).
inline constexpr double kSarWavelength = 3.75;

class WavelengthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-channel center wavelengths in micrometers. Non-empty, finite, > 0.
class Wavelengths {
 public:
  Wavelengths() = default;
  explicit Wavelengths(std::vector<double> micrometers);
  Wavelengths(std::initializer_list<double> micrometers) : Wavelengths(std::vector<double>(micrometers)) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }

  /// Channel i of the result is channel order[i] of this list.
  Wavelengths permuted(std::span<const std::size_t> order) const;

  friend bool operator==(const Wavelengths&, const Wavelengths&) = default;

 private:
  std::vector<double> values_;
};

/// Wavelengths of the RGB teacher input, in R, G, B order.
const Wavelengths& rgb_wavelengths();

}  // namespace dofa
