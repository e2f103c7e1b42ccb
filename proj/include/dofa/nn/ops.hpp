// SPDX-License-Identifier: Apache-2.0

// Differentiable tensor operations. All functions validate shapes and throw
// ShapeError on mismatch.

#pragma once

#include <cstddef>
#include <span>

#include "dofa/nn/autograd.hpp"

namespace dofa::nn {

// Matrices are rank-2, row-major.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// y = x W + b with x [N, Din], W [Din, Dout], b [Dout].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);

template <typename T> Var<T> relu(const Var<T>& x);
/// Exact (erf) GELU.
template <typename T> Var<T> gelu(const Var<T>& x);

/// Normalizes over the last axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

/// Row-wise softmax of a rank-2 tensor.
template <typename T> Var<T> softmax_rows(const Var<T>& x);

/// Scaled dot-product attention split over `num_heads` column groups.
/// q [Nq, D], k and v [Nk, D] -> [Nq, D]. No projections.
template <typename T>
Var<T> scaled_dot_product_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t num_heads);

/// Stacks rank-2 tensors with equal column counts.
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);
/// out[i] = x[indices[i]]; repeated indices accumulate in backward.
template <typename T> Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> indices);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
/// General axis permutation: out.shape[i] = x.shape[axes[i]].
template <typename T> Var<T> permute(const Var<T>& x, std::span<const std::size_t> axes);

/// Mean over rows of [N, D] -> [D].
template <typename T> Var<T> mean_rows(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

/// Mean of squared differences, scalar.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
/// a.b / (max(|a|, eps) max(|b|, eps)) for rank-1 inputs of equal length.
template <typename T> Var<T> cosine_similarity(const Var<T>& a, const Var<T>& b, T eps);

/// Mean softmax cross-entropy of logits [N, K] against integer labels.
template <typename T> Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Non-overlapping strided convolution, stride == kernel size P.
/// image [C, H, W] (constant), kernel [D, C, P, P], bias [D] -> [N, D], with
/// the N = (H/P)(W/P) patches in row-major grid order.
template <typename T>
Var<T> patch_conv2d(const Tensor<T>& image, const Var<T>& kernel, const Var<T>& bias);

}  // namespace dofa::nn
