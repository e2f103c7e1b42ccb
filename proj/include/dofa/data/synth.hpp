// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "dofa/data/modality.hpp"
#include "dofa/nn/rng.hpp"

namespace dofa::data {

/// Knobs of the synthetic scene model. In normalized units a pixel is
///   signature(k, λ_c) + gain_c · field(y, x) + noise
/// where the field is a sum of low-frequency cosines that averages to zero
/// over the image.
struct SynthOptions {
  double field_amplitude = 0.5;
  std::size_t field_waves = 3;
  double noise_std = 0.5;
  /// Per-sample brightness shift shared by all channels.
  double offset_jitter = 0.0;
};

/// Expected normalized value of class `k` (of `num_classes`) at wavelength λ.
double class_signature(int k, int num_classes, double lambda);

/// Draws one [C, H, W] sample of `spec` for class `class_id`; the image is
/// labelled with that class.
SpectralImage synth_sample(const ModalitySpec& spec, std::size_t height, std::size_t width, int class_id,
                           int num_classes, nn::Rng& rng, const SynthOptions& opts = {});

}  // namespace dofa::data
