// SPDX-License-Identifier: Apache-2.0

#include "dofa/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dofa::nn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
MatMap<T> mat(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatMap<T> mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> mat(Tensor<T>& t) {
  return mat(t, t.dim(0), t.dim(1));
}

template <typename T>
ConstMatMap<T> mat(const Tensor<T>& t) {
  return mat(t, t.dim(0), t.dim(1));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
  }
}

template <typename T>
Tensor<T>& parent_value(Node<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

template <typename T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  return self.parents[i]->grad_sink();
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  mat(out).noalias() = mat(a.value()) * mat(b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto dy = mat(self.grad);
    if (auto* ga = parent_grad(self, 0)) mat(*ga).noalias() += dy * mat(parent_value(self, 1)).transpose();
    if (auto* gb = parent_grad(self, 1)) mat(*gb).noalias() += mat(parent_value(self, 0)).transpose() * dy;
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "linear");
  require_rank(weight.shape(), 2, "linear");
  require_rank(bias.shape(), 1, "linear");
  if (x.dim(1) != weight.dim(0) || bias.dim(0) != weight.dim(1)) {
    throw ShapeError("linear: x " + to_string(x.shape()) + ", W " + to_string(weight.shape()) + ", b " +
                     to_string(bias.shape()));
  }
  const std::size_t dout = weight.dim(1);
  Tensor<T> out({x.dim(0), dout});
  auto y = mat(out);
  y.noalias() = mat(x.value()) * mat(weight.value());
  const auto b = mat(bias.value(), 1, dout);
  y.rowwise() += b.row(0);
  return make_result<T>(std::move(out), {x, weight, bias}, [dout](Node<T>& self) {
    const auto dy = mat(self.grad);
    if (auto* gx = parent_grad(self, 0)) mat(*gx).noalias() += dy * mat(parent_value(self, 1)).transpose();
    if (auto* gw = parent_grad(self, 1)) mat(*gw).noalias() += mat(parent_value(self, 0)).transpose() * dy;
    if (auto* gb = parent_grad(self, 2)) mat(*gb, 1, dout) += dy.colwise().sum();
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (auto* g = parent_grad(self, i)) *g += self.grad;
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* ga = parent_grad(self, 0)) *ga += self.grad;
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += factor * self.grad[i];
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& xv = parent_value(self, 0);
      for (std::size_t i = 0; i < g->numel(); ++i) {
        if (xv[i] > T{0}) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  return make_result<T>(std::move(out), {x}, [inv_sqrt2](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T inv_sqrt2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
      const auto& xv = parent_value(self, 0);
      for (std::size_t i = 0; i < g->numel(); ++i) {
        const T z = xv[i];
        const T cdf = T{0.5} * (T{1} + std::erf(z * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * z * z);
        (*g)[i] += self.grad[i] * (cdf + z * pdf);
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require_rank(gamma.shape(), 1, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gamma.dim(0) != d || beta.shape() != gamma.shape()) {
    throw ShapeError("layer_norm: x " + to_string(x.shape()) + " with gamma " + to_string(gamma.shape()) +
                     ", beta " + to_string(beta.shape()));
  }
  const std::size_t rows = x.value().numel() / d;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(rows);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &xv[r * d];
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](Node<T>& self) {
    const auto& dy = self.grad;
    const auto& gv = parent_value(self, 1);
    if (auto* gg = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += dy[r * d + j] * xhat[r * d + j];
    }
    if (auto* gb = parent_grad(self, 2)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += dy[r * d + j];
    }
    if (auto* gx = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = 0;
        T mean_dh_h = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = dy[r * d + j] * gv[j];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * d + j];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = dy[r * d + j] * gv[j];
          (*gx)[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

namespace {

template <typename T>
void softmax_row_inplace(T* row, std::size_t n) {
  T mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    total += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= total;
}

}  // namespace

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  Tensor<T> out = x.value();
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  for (std::size_t r = 0; r < rows; ++r) softmax_row_inplace(&out[r * cols], cols);
  return make_result<T>(std::move(out), {x}, [rows, cols](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = &self.value[r * cols];
        const T* dy = &self.grad[r * cols];
        T dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < cols; ++j) (*g)[r * cols + j] += y[j] * (dy[j] - dot);
      }
    }
  });
}

template <typename T>
Var<T> scaled_dot_product_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t num_heads) {
  require_rank(q.shape(), 2, "attention");
  require_rank(k.shape(), 2, "attention");
  require_rank(v.shape(), 2, "attention");
  const std::size_t nq = q.dim(0);
  const std::size_t nk = k.dim(0);
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != nk) {
    throw ShapeError("attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " +
                     to_string(v.shape()));
  }
  if (num_heads == 0 || d % num_heads != 0) {
    throw ShapeError("attention: embedding width " + std::to_string(d) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  const std::size_t hd = d / num_heads;
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  const auto qm = mat(q.value());
  const auto km = mat(k.value());
  const auto vm = mat(v.value());

  // Attention weights for every head, [H, Nq, Nk].
  Tensor<T> probs({num_heads, nq, nk});
  Tensor<T> out({nq, d});
  auto om = mat(out);
  const auto H = static_cast<Eigen::Index>(hd);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * hd);
    MatMap<T> a(&probs[h * nq * nk], static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(nk));
    a.noalias() = (qm.middleCols(c0, H) * km.middleCols(c0, H).transpose()) * inv_scale;
    for (std::size_t r = 0; r < nq; ++r) softmax_row_inplace(&a(static_cast<Eigen::Index>(r), 0), nk);
    om.middleCols(c0, H).noalias() = a * vm.middleCols(c0, H);
  }

  return make_result<T>(std::move(out), {q, k, v},
                        [probs = std::move(probs), num_heads, nq, nk, hd, inv_scale](Node<T>& self) {
    auto* gq = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    auto* gv = parent_grad(self, 2);
    const auto qm = mat(parent_value(self, 0));
    const auto km = mat(parent_value(self, 1));
    const auto vm = mat(parent_value(self, 2));
    const auto dy = mat(self.grad);
    const auto H = static_cast<Eigen::Index>(hd);
    RowMatrix<T> da(nq, nk);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h * hd);
      ConstMatMap<T> a(&probs[h * nq * nk], static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(nk));
      const auto dyh = dy.middleCols(c0, H);
      if (gv) mat(*gv).middleCols(c0, H).noalias() += a.transpose() * dyh;
      if (!gq && !gk) continue;
      da.noalias() = dyh * vm.middleCols(c0, H).transpose();
      // Softmax backward, row by row.
      for (Eigen::Index r = 0; r < da.rows(); ++r) {
        const T dot = da.row(r).dot(a.row(r));
        da.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
      }
      da *= inv_scale;
      if (gq) mat(*gq).middleCols(c0, H).noalias() += da * km.middleCols(c0, H);
      if (gk) mat(*gk).middleCols(c0, H).noalias() += da.transpose() * qm.middleCols(c0, H);
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().shape().back();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_rows");
    if (p.dim(1) != cols) throw ShapeError("concat_rows: column mismatch " + to_string(p.shape()));
    offsets.push_back(rows);
    rows += p.dim(0);
  }
  Tensor<T> out({rows, cols});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto src = parts[i].value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[i] * cols));
  }
  std::vector<Var<T>> parents(parts.begin(), parts.end());
  return make_result<T>(std::move(out), std::move(parents), [offsets, cols](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (auto* g = parent_grad(self, i)) {
        const std::size_t base = offsets[i] * cols;
        for (std::size_t j = 0; j < g->numel(); ++j) (*g)[j] += self.grad[base + j];
      }
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x.shape(), 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     to_string(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  Tensor<T> out({end - begin, cols});
  const auto src = x.value().data();
  std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin * cols),
            src.begin() + static_cast<std::ptrdiff_t>(end * cols), out.data().begin());
  return make_result<T>(std::move(out), {x}, [begin, cols](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const std::size_t base = begin * cols;
      for (std::size_t j = 0; j < self.grad.numel(); ++j) (*g)[base + j] += self.grad[j];
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> indices) {
  require_rank(x.shape(), 2, "gather_rows");
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t cols = x.dim(1);
  Tensor<T> out({indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(&x.value()[indices[i] * cols], cols, &out[i * cols]);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result<T>(std::move(out), {x}, [idx = std::move(idx), cols](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) (*g)[idx[i] * cols + j] += self.grad[i * cols + j];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.value().numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t j = 0; j < g->numel(); ++j) (*g)[j] += self.grad[j];
    }
  });
}

namespace {

// For each output linear index, the matching input linear index.
std::vector<std::size_t> permutation_map(const Shape& in_shape, std::span<const std::size_t> axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const std::size_t total = numel(in_shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t lin = 0; lin < total; ++lin) {
    map[lin] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      offset += strides[ax];
      if (counter[ax] < out_shape[ax]) break;
      offset -= strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& x, std::span<const std::size_t> axes) {
  const Shape& in_shape = x.shape();
  if (axes.size() != in_shape.size()) throw ShapeError("permute: axis count differs from rank");
  std::vector<bool> seen(axes.size(), false);
  Shape out_shape;
  for (auto a : axes) {
    if (a >= axes.size() || seen[a]) throw ShapeError("permute: axes are not a permutation");
    seen[a] = true;
    out_shape.push_back(in_shape[a]);
  }
  auto map = permutation_map(in_shape, axes);
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = x.value()[map[i]];
  return make_result<T>(std::move(out), {x}, [map = std::move(map)](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < map.size(); ++i) (*g)[map[i]] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  require_rank(x.shape(), 2, "mean_rows");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  Tensor<T> out({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[j] += x.value()[r * cols + j];
  const T inv = T{1} / static_cast<T>(rows);
  for (auto& v : out.data()) v *= inv;
  return make_result<T>(std::move(out), {x}, [rows, cols, inv](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) (*g)[r * cols + j] += inv * self.grad[j];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (auto v : x.value().data()) total += v;
  return make_result<T>(Tensor<T>::scalar(total), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T dy = self.grad[0];
      for (auto& v : g->data()) v += dy;
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().numel()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mse");
  const std::size_t n = a.value().numel();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = a.value()[i] - b.value()[i];
    total += diff * diff;
  }
  return make_result<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {a, b}, [n](Node<T>& self) {
    const T c = T{2} * self.grad[0] / static_cast<T>(n);
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += c * (av[i] - bv[i]);
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= c * (av[i] - bv[i]);
    }
  });
}

template <typename T>
Var<T> cosine_similarity(const Var<T>& a, const Var<T>& b, T eps) {
  require_rank(a.shape(), 1, "cosine_similarity");
  require_same_shape(a.value(), b.value(), "cosine_similarity");
  const std::size_t n = a.dim(0);
  T dot = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a.value()[i] * b.value()[i];
    saa += a.value()[i] * a.value()[i];
    sbb += b.value()[i] * b.value()[i];
  }
  const T na = std::sqrt(saa);
  const T nb = std::sqrt(sbb);
  // Norms are clamped at eps separately, so the value is exact whenever both
  // inputs are non-degenerate.
  const T ca = std::max(na, eps);
  const T cb = std::max(nb, eps);
  const T denom = ca * cb;
  const T cos = dot / denom;
  return make_result<T>(Tensor<T>::scalar(cos), {a, b}, [n, na, nb, denom, cos, eps](Node<T>& self) {
    const T dy = self.grad[0];
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    // d cos / da = b / denom - cos * a / |a|^2 while |a| > eps; a clamped
    // norm is constant.
    if (auto* ga = parent_grad(self, 0)) {
      const T ka = na > eps ? cos / (na * na) : T{0};
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += dy * (bv[i] / denom - ka * av[i]);
    }
    if (auto* gb = parent_grad(self, 1)) {
      const T kb = nb > eps ? cos / (nb * nb) : T{0};
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] += dy * (av[i] / denom - kb * bv[i]);
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "cross_entropy");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count differs from batch size");
  Tensor<T> probs = logits.value();
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(k) + ")");
    }
    softmax_row_inplace(&probs[r * k], k);
    total -= std::log(std::max(probs[r * k + static_cast<std::size_t>(labels[r])], std::numeric_limits<T>::min()));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {logits},
                        [probs = std::move(probs), lab = std::move(lab), n, k](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T c = self.grad[0] / static_cast<T>(n);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const T target = static_cast<std::size_t>(lab[r]) == j ? T{1} : T{0};
          (*g)[r * k + j] += c * (probs[r * k + j] - target);
        }
      }
    }
  });
}

template <typename T>
Var<T> patch_conv2d(const Tensor<T>& image, const Var<T>& kernel, const Var<T>& bias) {
  require_rank(image.shape(), 3, "patch_conv2d");
  require_rank(kernel.shape(), 4, "patch_conv2d");
  require_rank(bias.shape(), 1, "patch_conv2d");
  const std::size_t c_in = image.dim(0), height = image.dim(1), width = image.dim(2);
  const std::size_t d = kernel.dim(0), p = kernel.dim(2);
  if (kernel.dim(1) != c_in || kernel.dim(3) != p || bias.dim(0) != d) {
    throw ShapeError("patch_conv2d: image " + to_string(image.shape()) + ", kernel " + to_string(kernel.shape()) +
                     ", bias " + to_string(bias.shape()));
  }
  if (height % p != 0 || width % p != 0) {
    throw ShapeError("patch_conv2d: image " + to_string(image.shape()) + " not divisible by patch " + std::to_string(p));
  }
  const std::size_t gh = height / p, gw = width / p, n = gh * gw;
  Tensor<T> out({n, d});
  const auto& kv = kernel.value();
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* orow = &out[(gy * gw + gx) * d];
      for (std::size_t o = 0; o < d; ++o) {
        T acc = bias.value()[o];
        for (std::size_t c = 0; c < c_in; ++c) {
          for (std::size_t r = 0; r < p; ++r) {
            const T* img = &image[(c * height + gy * p + r) * width + gx * p];
            const T* ker = &kv[((o * c_in + c) * p + r) * p];
            for (std::size_t s = 0; s < p; ++s) acc += ker[s] * img[s];
          }
        }
        orow[o] = acc;
      }
    }
  }
  return make_result<T>(std::move(out), {kernel, bias},
                        [image, c_in, height, width, d, p, gh, gw](Node<T>& self) {
    const auto& dy = self.grad;
    if (auto* gk = parent_grad(self, 0)) {
      for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
          const T* drow = &dy[(gy * gw + gx) * d];
          for (std::size_t o = 0; o < d; ++o) {
            const T g = drow[o];
            for (std::size_t c = 0; c < c_in; ++c) {
              for (std::size_t r = 0; r < p; ++r) {
                const T* img = &image[(c * height + gy * p + r) * width + gx * p];
                T* ker = &(*gk)[((o * c_in + c) * p + r) * p];
                for (std::size_t s = 0; s < p; ++s) ker[s] += g * img[s];
              }
            }
          }
        }
      }
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < gh * gw; ++i)
        for (std::size_t o = 0; o < d; ++o) (*gb)[o] += dy[i * d + o];
    }
  });
}

#define DOFA_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> gelu(const Var<T>&);                                                            \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
  template Var<T> softmax_rows(const Var<T>&);                                                    \
  template Var<T> scaled_dot_product_attention(const Var<T>&, const Var<T>&, const Var<T>&,       \
                                               std::size_t);                                      \
  template Var<T> concat_rows(std::span<const Var<T>>);                                           \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                       \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> permute(const Var<T>&, std::span<const std::size_t>);                           \
  template Var<T> mean_rows(const Var<T>&);                                                       \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                              \
  template Var<T> cosine_similarity(const Var<T>&, const Var<T>&, T);                             \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>);                             \
  template Var<T> patch_conv2d(const Tensor<T>&, const Var<T>&, const Var<T>&);

DOFA_INSTANTIATE_OPS(float)
DOFA_INSTANTIATE_OPS(double)

#undef DOFA_INSTANTIATE_OPS

}  // namespace dofa::nn
