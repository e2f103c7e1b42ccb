// SPDX-License-Identifier: Apache-2.0

#include "dofa/nn/layers.hpp"

#include <cmath>

namespace dofa::nn {

template <typename T>
Tensor<T> init_tensor(const Shape& shape, Init init, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  Tensor<T> t(shape);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kTruncNormal:
      for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
      break;
    case Init::kXavierUniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
  }
  return t;
}

template <typename T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init)
    : weight(name + ".weight", init_tensor<T>({in, out}, init, rng, in, out)),
      bias(name + ".bias", Tensor<T>({out}), true, false) {}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, std::size_t dim)
    : gamma(name + ".weight", Tensor<T>({dim}, T{1}), true, false),
      beta(name + ".bias", Tensor<T>({dim}), true, false) {}

void TransformerBlockConfig::validate() const {
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ShapeError("embed_dim " + std::to_string(embed_dim) + " not divisible by " + std::to_string(num_heads) +
                     " heads");
  }
  if (mlp_dim() == 0) throw ShapeError("mlp_ratio yields an empty MLP");
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng,
                                          Init init)
    : num_heads(heads),
      q_proj(name + ".q", dim, dim, rng, init),
      k_proj(name + ".k", dim, dim, rng, init),
      v_proj(name + ".v", dim, dim, rng, init),
      out_proj(name + ".proj", dim, dim, rng, init) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(const Var<T>& q, const Var<T>& k, const Var<T>& v) const {
  auto ctx = scaled_dot_product_attention(q_proj(q), k_proj(k), v_proj(v), num_heads);
  return out_proj(ctx);
}

template <typename T>
void MultiHeadAttention<T>::collect(ParameterList<T>& out) {
  q_proj.collect(out);
  k_proj.collect(out);
  v_proj.collect(out);
  out_proj.collect(out);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, const TransformerBlockConfig& cfg, Rng& rng,
                                      Init init)
    : config(cfg),
      norm1(name + ".norm1", cfg.embed_dim),
      attn(name + ".attn", cfg.embed_dim, cfg.num_heads, rng, init),
      norm2(name + ".norm2", cfg.embed_dim),
      fc1(name + ".mlp.fc1", cfg.embed_dim, cfg.mlp_dim(), rng, init),
      fc2(name + ".mlp.fc2", cfg.mlp_dim(), cfg.embed_dim, rng, init) {
  cfg.validate();
}

template <typename T>
Var<T> TransformerBlock<T>::operator()(const Var<T>& x) const {
  if (x.shape().size() != 2 || x.dim(1) != config.embed_dim) {
    throw ShapeError("transformer block of width " + std::to_string(config.embed_dim) + " got " +
                     to_string(x.shape()));
  }
  auto h = norm1(x);
  auto y = add(x, attn(h, h, h));
  return add(y, fc2(gelu(fc1(norm2(y)))));
}

template <typename T>
void TransformerBlock<T>::collect(ParameterList<T>& out) {
  norm1.collect(out);
  attn.collect(out);
  norm2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

template <typename T>
void TransformerBlock<T>::zero_residual_branches() {
  attn.out_proj.weight.value().fill(T{0});
  attn.out_proj.bias.value().fill(T{0});
  fc2.weight.value().fill(T{0});
  fc2.bias.value().fill(T{0});
}

template Tensor<float> init_tensor(const Shape&, Init, Rng&, std::size_t, std::size_t);
template Tensor<double> init_tensor(const Shape&, Init, Rng&, std::size_t, std::size_t);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;

}  // namespace dofa::nn
