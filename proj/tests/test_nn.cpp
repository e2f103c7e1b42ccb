// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dofa/nn/grad_check.hpp"
#include "dofa/nn/layers.hpp"
#include "support.hpp"

using namespace dofa::nn;

namespace {

Tensor<double> randn(Shape shape, Rng& rng, double s = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = s * rng.normal();
  return t;
}

Var<double> c(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

Tensor<double> mat(std::size_t r, std::size_t cols, std::vector<double> v) { return Tensor<double>({r, cols}, std::move(v)); }

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(2), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS(t.item());
  Tensor<float> nan({1}, std::nanf(""));
  CHECK_FALSE(all_finite(nan));
}

TEST_CASE("linear: hand examples") {
  const auto eye = mat(2, 2, {1, 0, 0, 1});
  CHECK(linear(c(mat(1, 2, {1, 2})), c(eye), c(Tensor<double>({2}))).value().storage() == std::vector<double>{1, 2});
  CHECK(linear(c(mat(1, 2, {0, 0})), c(mat(2, 2, {9, -2, 5, 7})), c(Tensor<double>({2}, {3, 4}))).value().storage() ==
        std::vector<double>{3, 4});
  CHECK(linear(c(mat(1, 2, {1, 1})), c(mat(2, 2, {2, 0, 0, 3})), c(Tensor<double>({2}, {1, 1}))).value().storage() ==
        std::vector<double>{3, 4});
  CHECK_THROWS_AS(linear(c(mat(1, 3, {1, 1, 1})), c(eye), c(Tensor<double>({2}))), ShapeError);
}

TEST_CASE("matmul against loops") {
  Rng rng(1);
  const auto a = randn({5, 7}, rng), b = randn({7, 3}, rng);
  CHECK(ref::max_diff(ref::matmul(ref::from(a), ref::from(b)), matmul(c(a), c(b)).value()) < 1e-12);
}

TEST_CASE("layer_norm examples") {
  const Var<double> g = c(Tensor<double>({4}, 1.0)), b = c(Tensor<double>({4}));
  const auto flat = layer_norm(c(mat(1, 4, {5, 5, 5, 5})), g, b, 1e-6).value();
  for (double v : flat.data()) CHECK(v == doctest::Approx(0.0));

  const auto pm = layer_norm(c(mat(1, 2, {1, -1})), c(Tensor<double>({2}, 1.0)), c(Tensor<double>({2})), 1e-6).value();
  CHECK(pm[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(pm[1] == doctest::Approx(-1.0).epsilon(1e-5));

  Rng rng(2);
  const auto seven = layer_norm(c(randn({3, 4}, rng)), c(Tensor<double>({4})), c(Tensor<double>({4}, 7.0)), 1e-6).value();
  for (double v : seven.data()) CHECK(v == 7.0);
}

TEST_CASE("attention: single token takes the value path") {
  Rng rng(3);
  MultiHeadAttention<double> mha("a", 8, 2, rng);
  const auto q = randn({1, 8}, rng), kv = randn({1, 8}, rng);
  const auto out = mha(c(q), c(kv), c(kv)).value();
  const auto expect = ref::linear(ref::linear(ref::from(kv), mha.v_proj), mha.out_proj);
  CHECK(ref::max_diff(expect, out) < 1e-12);
}

TEST_CASE("attention: identical tokens give identical rows") {
  Rng rng(4);
  MultiHeadAttention<double> mha("a", 8, 4, rng);
  const auto row = randn({1, 8}, rng);
  Tensor<double> x({5, 8});
  for (std::size_t i = 0; i < 5; ++i) std::copy_n(row.data().begin(), 8, &x[i * 8]);
  const auto out = mha(c(x), c(x), c(x)).value();
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)).epsilon(1e-12));
}

TEST_CASE("attention: random three tokens vs brute force") {
  Rng rng(5);
  for (std::size_t heads : {1, 2, 4}) {
    MultiHeadAttention<double> mha("a", 8, heads, rng);
    const auto q = randn({3, 8}, rng), k = randn({3, 8}, rng), v = randn({3, 8}, rng);
    const auto expect = ref::mha(ref::from(q), ref::from(k), ref::from(v), mha);
    CHECK(ref::max_diff(expect, mha(c(q), c(k), c(v)).value()) < 1e-6);
  }
}

TEST_CASE("transformer block") {
  Rng rng(6);
  TransformerBlock<double> block("b", {16, 4, 4.0, 1}, rng);
  // Non-trivial norm parameters so the reference exercises them.
  for (auto* p : ParameterList<double>{&block.norm1.gamma, &block.norm2.beta}) {
    for (auto& v : p->value().data()) v += 0.3 * rng.normal();
  }

  SUBCASE("matches independent forward") {
    const auto x = randn({6, 16}, rng);
    CHECK(ref::max_diff(ref::block(ref::from(x), block), block(c(x)).value()) < 1e-6);
  }
  SUBCASE("shape holds for any token count") {
    for (std::size_t n : {1, 2, 7, 33}) CHECK(block(c(randn({n, 16}, rng))).shape() == Shape{n, 16});
  }
  SUBCASE("zeroed residual branches give the identity") {
    block.zero_residual_branches();
    const auto x = randn({4, 16}, rng);
    CHECK(block(c(x)).value() == x);
  }
  SUBCASE("float instance agrees with double") {
    Rng r1(9), r2(9);
    TransformerBlock<double> bd("b", {16, 4, 4.0, 1}, r1);
    TransformerBlock<float> bf("b", {16, 4, 4.0, 1}, r2);
    const auto x = randn({4, 16}, rng);
    CHECK(max_abs_diff(bd(c(x)).value().cast<float>(), bf(Var<float>::constant(x.cast<float>())).value()) < 1e-4);
  }
  CHECK_THROWS_AS(TransformerBlock<double>("b", {10, 4, 4.0, 1}, rng), ShapeError);
}

TEST_CASE("gelu is the erf form") {
  const auto x = Tensor<double>({4}, {-2.0, -0.5, 0.0, 1.3});
  const auto y = gelu(c(x)).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(ref::gelu(x[i])).epsilon(1e-14));
}

TEST_CASE("cosine similarity anchors") {
  const auto x = Tensor<double>({3}, {1.0, 2.0, -0.5});
  const auto y = Tensor<double>({3}, {2.0, -1.0, 0.0});
  Tensor<double> neg = x;
  for (auto& v : neg.data()) v = -v;
  CHECK(cosine_similarity(c(x), c(x), 1e-8).value().item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(c(x), c(y), 1e-8).value().item() == 0.0);
  CHECK(cosine_similarity(c(x), c(neg), 1e-8).value().item() == doctest::Approx(-1.0).epsilon(1e-15));
  // Zero vector: finite, no division by zero.
  CHECK(cosine_similarity(c(Tensor<double>({3})), c(x), 1e-8).value().item() == 0.0);
}

TEST_CASE("backward accumulates through shared leaves") {
  auto w = Var<double>::leaf(Tensor<double>({2}, {1.0, 2.0}), true);
  auto y = sum(add(mul(w, w), w));  // sum(w^2 + w)
  backward(y);
  CHECK(w.grad().storage() == std::vector<double>{3.0, 5.0});
  {
    NoGradGuard guard;
    auto z = sum(mul(w, w));
    CHECK_FALSE(z.requires_grad());
  }
}

TEST_CASE("grad_check: trivial functions") {
  SUBCASE("theta squared at 3") {
    Parameter<double> theta("theta", Tensor<double>({1}, 3.0));
    const auto report = grad_check([&] { return mul(theta.var(), theta.var()); }, {&theta});
    CHECK(report.max_relative_error < 1e-9);
    CHECK(theta.grad()[0] == doctest::Approx(6.0));
  }
  SUBCASE("sum of a linear map is exact") {
    Rng rng(7);
    Linear<double> lin("l", 5, 3, rng);
    const auto x = randn({4, 5}, rng);
    ParameterList<double> params;
    lin.collect(params);
    const auto report = grad_check([&] { return sum(lin(c(x))); }, params);
    CHECK(report.max_relative_error < 1e-9);
    CHECK(report.elements_checked == 8 + 3);  // weight sampled, bias exhaustive
  }
}

TEST_CASE("grad_check: individual ops") {
  Rng rng(8);
  Parameter<double> a("a", randn({3, 4}, rng));
  Parameter<double> b("b", randn({3, 4}, rng));
  Parameter<double> g("g", randn({4}, rng));
  ParameterList<double> params{&a, &b, &g};
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<int> labels{1, 3, 0};
  const std::vector<std::size_t> axes{1, 0};

  std::vector<std::pair<const char*, std::function<Var<double>()>>> cases{
      {"gelu", [&] { return sum(mul(gelu(a.var()), b.var())); }},
      {"relu", [&] { return sum(mul(relu(a.var()), b.var())); }},
      {"softmax", [&] { return sum(mul(softmax_rows(a.var()), b.var())); }},
      {"layer_norm", [&] { return sum(mul(layer_norm(a.var(), g.var(), g.var(), 1e-6), b.var())); }},
      {"attention", [&] { return sum(mul(scaled_dot_product_attention(a.var(), b.var(), b.var(), 2), a.var())); }},
      {"gather", [&] { return sum(mul(gather_rows<double>(a.var(), rows), b.var())); }},
      {"permute", [&] { return sum(mul(permute<double>(a.var(), axes), permute<double>(b.var(), axes))); }},
      {"cross_entropy", [&] { return cross_entropy<double>(mul(a.var(), b.var()), labels); }},
      {"cosine", [&] { return cosine_similarity(reshape(a.var(), {12}), reshape(b.var(), {12}), 1e-8); }},
      {"mse", [&] { return mse(a.var(), b.var()); }},
      {"mean_rows", [&] { return sum(mul(mean_rows(a.var()), g.var())); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(grad_check(fn, params).max_relative_error < 1e-6);
  }
}

TEST_CASE("patch convolution equals patchify then matmul") {
  Rng rng(10);
  const std::size_t cch = 3, p = 4, h = 8, d = 5;
  const auto image = randn({cch, h, h}, rng);
  const auto kernel = randn({d, cch, p, p}, rng);
  const auto bias = randn({d}, rng);
  const auto out = patch_conv2d(image, c(kernel), c(bias)).value();
  REQUIRE(out.shape() == Shape{4, d});
  for (std::size_t n = 0; n < 4; ++n) {
    const std::size_t gy = n / 2, gx = n % 2;
    for (std::size_t o = 0; o < d; ++o) {
      double s = bias[o];
      for (std::size_t ch = 0; ch < cch; ++ch)
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t q = 0; q < p; ++q)
            s += kernel[((o * cch + ch) * p + r) * p + q] * image[(ch * h + gy * p + r) * h + gx * p + q];
      CHECK(out.at(n, o) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  Parameter<double> k("k", kernel), bb("b", bias);
  CHECK(grad_check([&] { return sum(mul(patch_conv2d(image, k.var(), bb.var()), c(out))); }, {&k, &bb})
            .max_relative_error < 1e-6);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, {2}) != derive_seed(1, {3}));
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}
