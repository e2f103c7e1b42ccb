// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "dofa/nn/autograd.hpp"
#include "dofa/nn/ops.hpp"
#include "dofa/nn/rng.hpp"

namespace dofa::nn {

enum class Init {
  kTruncNormal,    // std 0.02, clipped at 2 std
  kXavierUniform,  // fan_in + fan_out
  kZeros,
};

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init = Init::kXavierUniform);

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight.var(), bias.var()); }
  void collect(ParameterList<T>& out) { out.push_back(&weight); out.push_back(&bias); }

  Parameter<T> weight;  // [in, out]
  Parameter<T> bias;    // [out]
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim);

  Var<T> operator()(const Var<T>& x) const {
    return layer_norm(x, gamma.var(), beta.var(), static_cast<T>(kLayerNormEps));
  }
  void collect(ParameterList<T>& out) { out.push_back(&gamma); out.push_back(&beta); }

  Parameter<T> gamma;
  Parameter<T> beta;
};

struct TransformerBlockConfig {
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t depth = 1;

  /// Throws ShapeError when embed_dim is not divisible by num_heads.
  void validate() const;
  std::size_t mlp_dim() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim)); }
};

/// Multi-head attention with separate query/key/value/output projections.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t num_heads, Rng& rng,
                     Init init = Init::kXavierUniform);

  Var<T> operator()(const Var<T>& q, const Var<T>& k, const Var<T>& v) const;
  void collect(ParameterList<T>& out);

  std::size_t num_heads = 1;
  Linear<T> q_proj, k_proj, v_proj, out_proj;
};

template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const MultiHeadAttention<T>& mha) {
  return mha(q, k, v);
}

/// Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)) with a GELU MLP.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, const TransformerBlockConfig& cfg, Rng& rng,
                   Init init = Init::kXavierUniform);

  Var<T> operator()(const Var<T>& x) const;
  void collect(ParameterList<T>& out);
  /// Zeroes the attention output projection and the second MLP layer, which
  /// makes the block the identity map.
  void zero_residual_branches();

  TransformerBlockConfig config;
  LayerNorm<T> norm1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm2;
  Linear<T> fc1, fc2;
};

template <typename T>
Var<T> transformer_block(const Var<T>& x, const TransformerBlock<T>& block) {
  return block(x);
}

template <typename T>
Tensor<T> init_tensor(const Shape& shape, Init init, Rng& rng, std::size_t fan_in = 0, std::size_t fan_out = 0);

}  // namespace dofa::nn
