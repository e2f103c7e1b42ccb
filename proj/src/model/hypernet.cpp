// SPDX-License-Identifier: Apache-2.0

#include "dofa/hypernet.hpp"

#include <array>
#include <cmath>

namespace dofa {

using nn::ShapeError;

template <typename T>
Tensor<T> encode_wavelengths(std::span<const double> lambdas, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ShapeError("wavelength encoding width must be even, got " + std::to_string(dim));
  if (lambdas.empty()) throw WavelengthError("wavelength list is empty");
  Tensor<T> out({lambdas.size(), dim});
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!std::isfinite(lambdas[i])) throw WavelengthError("non-finite wavelength at channel " + std::to_string(i));
    for (std::size_t k = 0; k < dim / 2; ++k) {
      const double angle = lambdas[i] / std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
      out.at(i, 2 * k) = static_cast<T>(std::sin(angle));
      out.at(i, 2 * k + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return out;
}

void GeneratorConfig::validate() const {
  if (wave_dim == 0 || wave_dim % 2 != 0) throw ShapeError("generator wave_dim must be even");
  if (num_heads == 0 || wave_dim % num_heads != 0) throw ShapeError("generator wave_dim not divisible by head count");
  if (weight_block == 0 || bias_dim == 0) throw ShapeError("generator output sizes must be positive");
}

GeneratorConfig encoder_generator_config(std::size_t wave_dim, std::size_t num_weight_tokens, std::size_t patch,
                                         std::size_t embed_dim) {
  GeneratorConfig cfg;
  cfg.wave_dim = wave_dim;
  cfg.num_weight_tokens = num_weight_tokens;
  cfg.weight_block = patch * patch * embed_dim;
  cfg.bias_dim = embed_dim;
  return cfg;
}

GeneratorConfig decoder_generator_config(std::size_t wave_dim, std::size_t num_weight_tokens, std::size_t patch,
                                         std::size_t decoder_dim) {
  GeneratorConfig cfg;
  cfg.wave_dim = wave_dim;
  cfg.num_weight_tokens = num_weight_tokens;
  cfg.weight_block = patch * patch * decoder_dim;
  cfg.bias_dim = patch * patch;
  return cfg;
}

template <typename T>
WeightGenerator<T>::WeightGenerator(const std::string& name, const GeneratorConfig& cfg, nn::Rng& rng)
    : config(cfg),
      fc1(name + ".fc1", cfg.wave_dim, cfg.wave_dim, rng, nn::Init::kTruncNormal),
      fc2(name + ".fc2", cfg.wave_dim, cfg.wave_dim, rng, nn::Init::kTruncNormal),
      weight_tokens(name + ".weight_tokens",
                    nn::init_tensor<T>({std::max<std::size_t>(cfg.num_weight_tokens, 1), cfg.wave_dim},
                                       nn::Init::kTruncNormal, rng),
                    true, false),
      bias_token(name + ".bias_token", nn::init_tensor<T>({1, cfg.wave_dim}, nn::Init::kTruncNormal, rng), true,
                 false),
      encoder(name + ".encoder", nn::TransformerBlockConfig{cfg.wave_dim, cfg.num_heads, 4.0, 1}, rng,
              nn::Init::kTruncNormal),
      fc_weight(name + ".fc_weight", cfg.wave_dim, cfg.weight_block, rng, nn::Init::kTruncNormal),
      fc_bias(name + ".fc_bias", cfg.wave_dim, cfg.bias_dim, rng, nn::Init::kTruncNormal) {
  cfg.validate();
  if (cfg.num_weight_tokens == 0) throw ShapeError("generator needs at least one weight query token");
}

template <typename T>
typename WeightGenerator<T>::Features WeightGenerator<T>::run(const Wavelengths& lambdas) const {
  if (lambdas.empty()) throw WavelengthError("generator called with no wavelengths");
  const std::size_t c = lambdas.size();
  auto encoded = Var<T>::constant(encode_wavelengths<T>(lambdas.values(), config.wave_dim));
  auto wave = nn::add(nn::relu(fc2(nn::relu(fc1(encoded)))), encoded);
  const std::array<Var<T>, 3> parts{wave, weight_tokens.var(), bias_token.var()};
  auto mixed = encoder(nn::concat_rows<T>(parts));
  const std::size_t total = mixed.dim(0);
  auto weight_rows = fc_weight(nn::add(nn::slice_rows(mixed, 0, c), wave));
  return Features{weight_rows, nn::slice_rows(mixed, total - 1, total), wave};
}

template <typename T>
void WeightGenerator<T>::collect(ParameterList<T>& out) {
  fc1.collect(out);
  fc2.collect(out);
  out.push_back(&weight_tokens);
  out.push_back(&bias_token);
  encoder.collect(out);
  fc_weight.collect(out);
  fc_bias.collect(out);
}

template <typename T>
ParameterList<T> WeightGenerator<T>::parameters() {
  ParameterList<T> out;
  collect(out);
  return out;
}

template <typename T>
DynamicKernel<T> generate_weights(const Wavelengths& lambdas, const WeightGenerator<T>& gen, std::size_t patch,
                                  std::size_t embed_dim) {
  if (gen.config.weight_block != patch * patch * embed_dim || gen.config.bias_dim != embed_dim) {
    throw ShapeError("generator outputs do not match patch " + std::to_string(patch) + " / width " +
                     std::to_string(embed_dim));
  }
  const std::size_t c = lambdas.size();
  auto features = gen.run(lambdas);
  auto grid = nn::reshape(features.weight_rows, {c, patch, patch, embed_dim});
  constexpr std::array<std::size_t, 4> to_dcpp{3, 0, 1, 2};
  auto kernel = nn::permute<T>(grid, to_dcpp);
  auto bias = nn::reshape(gen.fc_bias(features.bias_token), {embed_dim});
  return DynamicKernel<T>{kernel, bias};
}

template <typename T>
DecoderHead<T> generate_decoder_weights(const Wavelengths& lambdas, const WeightGenerator<T>& gen, std::size_t patch,
                                        std::size_t decoder_dim) {
  const std::size_t pp = patch * patch;
  if (gen.config.weight_block != pp * decoder_dim || gen.config.bias_dim != pp) {
    throw ShapeError("decoder generator outputs do not match patch " + std::to_string(patch) + " / width " +
                     std::to_string(decoder_dim));
  }
  const std::size_t c = lambdas.size();
  auto features = gen.run(lambdas);
  auto blocks = nn::reshape(features.weight_rows, {c, pp, decoder_dim});
  constexpr std::array<std::size_t, 3> to_dcp{2, 0, 1};
  auto weight = nn::reshape(nn::permute<T>(blocks, to_dcp), {decoder_dim, c * pp});
  const std::vector<std::size_t> repeat(c, 0);
  auto bias_in = nn::add(nn::gather_rows<T>(features.bias_token, repeat), features.wave_tokens);
  auto bias = nn::reshape(gen.fc_bias(bias_in), {c * pp});
  return DecoderHead<T>{weight, bias};
}

template Tensor<float> encode_wavelengths(std::span<const double>, std::size_t);
template Tensor<double> encode_wavelengths(std::span<const double>, std::size_t);
template class WeightGenerator<float>;
template class WeightGenerator<double>;
template DynamicKernel<float> generate_weights(const Wavelengths&, const WeightGenerator<float>&, std::size_t,
                                               std::size_t);
template DynamicKernel<double> generate_weights(const Wavelengths&, const WeightGenerator<double>&, std::size_t,
                                                std::size_t);
template DecoderHead<float> generate_decoder_weights(const Wavelengths&, const WeightGenerator<float>&, std::size_t,
                                                     std::size_t);
template DecoderHead<double> generate_decoder_weights(const Wavelengths&, const WeightGenerator<double>&,
                                                      std::size_t, std::size_t);

}  // namespace dofa
