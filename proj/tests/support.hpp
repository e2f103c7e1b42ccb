// SPDX-License-Identifier: Apache-2.0

// Loop-based reference implementations used as oracles. Nothing here calls
// into the library's math; only plain loops over std::vector<double>.

#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "dofa/nn/layers.hpp"

namespace ref {

using dofa::nn::Tensor;

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

template <typename T>
Mat from(const Tensor<T>& t) {
  Mat m(t.dim(0), t.numel() / t.dim(0));
  for (std::size_t i = 0; i < t.numel(); ++i) m.a[i] = static_cast<double>(t[i]);
  return m;
}

template <typename T>
std::vector<double> vec(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

inline Mat matmul(const Mat& x, const Mat& w) {
  Mat out(x.rows, w.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) s += x(i, k) * w(k, j);
      out(i, j) = s;
    }
  return out;
}

template <typename T>
Mat linear(const Mat& x, const dofa::nn::Linear<T>& l) {
  auto out = matmul(x, from(l.weight.value()));
  const auto b = vec(l.bias.value());
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += b[j];
  return out;
}

template <typename T>
Mat layer_norm(const Mat& x, const dofa::nn::LayerNorm<T>& ln, double eps = 1e-6) {
  const auto g = vec(ln.gamma.value());
  const auto b = vec(ln.beta.value());
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mu += x(i, j);
    mu /= static_cast<double>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mu) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return out;
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.a.size(); ++i) a.a[i] += b.a[i];
  return a;
}

/// softmax(Q_h K_h^T / sqrt(d_h)) V_h per head, heads side by side.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads) {
  const std::size_t dh = q.cols / heads;
  Mat out(q.rows, q.cols);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < q.rows; ++i) {
      std::vector<double> s(k.rows);
      double mx = -1e300;
      for (std::size_t j = 0; j < k.rows; ++j) {
        double d = 0.0;
        for (std::size_t e = 0; e < dh; ++e) d += q(i, h * dh + e) * k(j, h * dh + e);
        s[j] = d / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < k.rows; ++j)
        for (std::size_t e = 0; e < dh; ++e) out(i, h * dh + e) += s[j] / z * v(j, h * dh + e);
    }
  return out;
}

template <typename T>
Mat mha(const Mat& q, const Mat& k, const Mat& v, const dofa::nn::MultiHeadAttention<T>& m) {
  return linear(attention(linear(q, m.q_proj), linear(k, m.k_proj), linear(v, m.v_proj), m.num_heads), m.out_proj);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

template <typename T>
Mat block(const Mat& x, const dofa::nn::TransformerBlock<T>& b) {
  const auto h = layer_norm(x, b.norm1);
  const auto y = add(x, mha(h, h, h, b.attn));
  auto m = linear(layer_norm(y, b.norm2), b.fc1);
  for (auto& e : m.a) e = gelu(e);
  return add(y, linear(m, b.fc2));
}

template <typename T>
double max_diff(const Mat& m, const Tensor<T>& t) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.a.size(); ++i) worst = std::max(worst, std::abs(m.a[i] - static_cast<double>(t[i])));
  return worst;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dofa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ref
