// SPDX-License-Identifier: Apache-2.0

// Wavelength-conditioned weight generator.
//
// Pipeline for C input wavelengths:
//   V   = sincos(λ)                        [C, Dλ]
//   V'  = ReLU(fc2(ReLU(fc1(V)))) + V      [C, Dλ]
//   V'' = block([V'; Q_w; Q_b])            [C + Nw + 1, Dλ]
//   M_w = fc_weight(V''[0:C] + V')         [C, weight_block]
//   bias from the trailing bias-token row V''[C + Nw].
// The Nw weight-query tokens act as learned context for the wavelength tokens.

#pragma once

#include <span>
#include <string>

#include "dofa/nn/layers.hpp"
#include "dofa/wavelengths.hpp"

namespace dofa {

using nn::Parameter;
using nn::ParameterList;
using nn::Tensor;
using nn::Var;

/// Sine-cosine features of each wavelength: row i holds
/// sin(λ_i / 10000^(2k/dim)) at column 2k and the matching cos at 2k+1.
/// Only finiteness is checked, so λ = 0 is accepted here.
template <typename T>
Tensor<T> encode_wavelengths(std::span<const double> lambdas, std::size_t dim);

struct GeneratorConfig {
  std::size_t wave_dim = 128;
  std::size_t num_weight_tokens = 16;
  std::size_t num_heads = 4;
  /// Outputs of fc_weight per wavelength token.
  std::size_t weight_block = 0;
  /// Outputs of fc_bias.
  std::size_t bias_dim = 0;

  void validate() const;
};

template <typename T>
class WeightGenerator {
 public:
  struct Features {
    Var<T> weight_rows;  // M_w, [C, weight_block]
    Var<T> bias_token;   // V''_b, [1, Dλ]
    Var<T> wave_tokens;  // V'_λ, [C, Dλ]
  };

  WeightGenerator() = default;
  WeightGenerator(const std::string& name, const GeneratorConfig& cfg, nn::Rng& rng);

  Features run(const Wavelengths& lambdas) const;
  void collect(ParameterList<T>& out);
  ParameterList<T> parameters();

  GeneratorConfig config;
  nn::Linear<T> fc1, fc2;
  Parameter<T> weight_tokens;  // Q_w, [Nw, Dλ]
  Parameter<T> bias_token;     // Q_b, [1, Dλ]
  nn::TransformerBlock<T> encoder;
  nn::Linear<T> fc_weight;
  nn::Linear<T> fc_bias;
};

/// Generated patch-embedding convolution.
template <typename T>
struct DynamicKernel {
  Var<T> kernel;  // [D, C, P, P]
  Var<T> bias;    // [D]
};

/// Generated reconstruction projection: pixels = tokens · weight + bias.
template <typename T>
struct DecoderHead {
  Var<T> weight;  // [D_dec, C·P²], columns in (channel, row, col) order
  Var<T> bias;    // [C·P²]
};

/// The generator must be configured with weight_block = P²·D, bias_dim = D.
/// kernel[d, c, r, s] = M_w[c, (r·P + s)·D + d].
template <typename T>
DynamicKernel<T> generate_weights(const Wavelengths& lambdas, const WeightGenerator<T>& gen, std::size_t patch,
                                  std::size_t embed_dim);

/// The generator must be configured with weight_block = P²·D_dec and
/// bias_dim = P². Channel c contributes weight[d, c·P² + p] = M_w[c, p·D_dec + d]
/// and bias block fc_bias(V''_b + V'_λ[c]).
template <typename T>
DecoderHead<T> generate_decoder_weights(const Wavelengths& lambdas, const WeightGenerator<T>& gen, std::size_t patch,
                                        std::size_t decoder_dim);

GeneratorConfig encoder_generator_config(std::size_t wave_dim, std::size_t num_weight_tokens, std::size_t patch,
                                         std::size_t embed_dim);
GeneratorConfig decoder_generator_config(std::size_t wave_dim, std::size_t num_weight_tokens, std::size_t patch,
                                         std::size_t decoder_dim);

}  // namespace dofa
