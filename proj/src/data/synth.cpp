// SPDX-License-Identifier: Apache-2.0

#include "dofa/data/synth.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dofa::data {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

double class_signature(int k, int num_classes, double lambda) {
  if (num_classes < 1 || k < 0 || k >= num_classes) throw std::invalid_argument("class id out of range");
  // Evenly spaced class levels plus a class-phased spectral ripple.
  const double level = num_classes == 1 ? 0.0 : 0.8 * (static_cast<double>(k) / (num_classes - 1) - 0.5);
  const double phase = kTwoPi * static_cast<double>(k) / num_classes;
  return level + 0.8 * std::sin(kTwoPi * lambda / 0.6 + phase);
}

SpectralImage synth_sample(const ModalitySpec& spec, std::size_t height, std::size_t width, int class_id,
                           int num_classes, nn::Rng& rng, const SynthOptions& opts) {
  if (class_id < 0 || class_id >= num_classes) throw std::invalid_argument("synth_sample: class_id >= num_classes");
  if (height == 0 || width == 0) throw std::invalid_argument("synth_sample: empty image");
  const std::size_t c = spec.channels();

  struct Wave {
    double fy, fx, phase, amplitude;
  };
  std::vector<Wave> waves(opts.field_waves);
  for (auto& w : waves) {
    // Integer frequencies, never both zero, so every wave sums to zero.
    do {
      w.fy = static_cast<double>(rng.index(3));
      w.fx = static_cast<double>(rng.index(3));
    } while (w.fy == 0.0 && w.fx == 0.0);
    w.phase = rng.uniform(0.0, kTwoPi);
    w.amplitude = opts.field_amplitude * rng.normal() / std::sqrt(static_cast<double>(opts.field_waves));
  }
  const double gain_phase = rng.uniform(0.0, kTwoPi);
  const double offset = opts.offset_jitter * rng.normal();

  std::vector<double> field(height * width, 0.0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double v = 0.0;
      for (const auto& w : waves) {
        v += w.amplitude * std::cos(kTwoPi * (w.fy * static_cast<double>(y) / static_cast<double>(height) +
                                              w.fx * static_cast<double>(x) / static_cast<double>(width)) +
                                    w.phase);
      }
      field[y * width + x] = v;
    }
  }

  nn::Tensor<float> data({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double lambda = spec.wavelengths[ch];
    const double signature = class_signature(class_id, num_classes, lambda) + offset;
    const double gain = 1.0 + 0.5 * std::sin(kTwoPi * lambda / 0.9 + gain_phase);
    for (std::size_t i = 0; i < height * width; ++i) {
      const double z = signature + gain * field[i] + opts.noise_std * rng.normal();
      // Simulated sensor value, then the modality's normalization.
      const double raw = spec.mean[ch] + spec.stddev[ch] * z;
      data[ch * height * width + i] = static_cast<float>((raw - spec.mean[ch]) / spec.stddev[ch]);
    }
  }
  return SpectralImage{std::move(data), spec.wavelengths, spec.name, class_id};
}

}  // namespace dofa::data
