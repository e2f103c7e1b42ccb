// SPDX-License-Identifier: Apache-2.0

#include "dofa/train/probe.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "dofa/nn/rng.hpp"

namespace dofa::train {

nn::Tensor<float> extract_features(const DofaModel<float>& model, const data::Dataset& ds) {
  if (ds.size() == 0) throw ProbeError("empty dataset");
  nn::NoGradGuard no_grad;
  const std::size_t d = model.config.embed_dim;
  nn::Tensor<float> out({ds.size(), d});
  std::map<std::string, DynamicKernel<float>> kernels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& img = ds.images[i];
    auto it = kernels.find(img.modality);
    if (it == kernels.end()) it = kernels.emplace(img.modality, model.encoder_weights(img.wavelengths)).first;
    const auto feat = model.pooled_features(img.data, it->second).value();
    std::copy(feat.data().begin(), feat.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<int> require_labels(const data::Dataset& ds) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.images[i].label) throw ProbeError("sample " + ds.ids[i] + " has no label");
    labels.push_back(*ds.images[i].label);
  }
  return labels;
}

namespace {

struct Standardized {
  std::vector<double> x;  // row-major [n, d]
  std::size_t n = 0, d = 0;
};

Standardized standardize(const nn::Tensor<float>& x, const std::vector<double>& mean, const std::vector<double>& inv_std) {
  Standardized s{std::vector<double>(x.numel()), x.dim(0), x.dim(1)};
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t j = 0; j < s.d; ++j) s.x[i * s.d + j] = (x.at(i, j) - mean[j]) * inv_std[j];
  return s;
}

/// Linear softmax classifier W [d, k], b [k].
struct Classifier {
  std::size_t d, k;
  std::vector<double> w, b;
  Classifier(std::size_t d_, std::size_t k_) : d(d_), k(k_), w(d_ * k_, 0.0), b(k_, 0.0) {}

  /// Softmax probabilities of row i into p.
  void probs(const Standardized& s, std::size_t i, std::vector<double>& p) const {
    p.assign(b.begin(), b.end());
    for (std::size_t j = 0; j < d; ++j) {
      const double xj = s.x[i * d + j];
      for (std::size_t c = 0; c < k; ++c) p[c] += xj * w[j * k + c];
    }
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (auto& v : p) z += (v = std::exp(v - mx));
    for (auto& v : p) v /= z;
  }
};

struct Eval {
  double loss = 0.0, acc = 0.0;
};

Eval evaluate(const Classifier& clf, const Standardized& s, const std::vector<int>& y, std::vector<std::size_t> rows,
              std::vector<std::vector<std::size_t>>* confusion = nullptr) {
  Eval e;
  std::vector<double> p;
  for (auto i : rows) {
    clf.probs(s, i, p);
    const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const auto truth = static_cast<std::size_t>(y[i]);
    e.loss -= std::log(std::max(p[truth], 1e-300));
    e.acc += pred == truth ? 1.0 : 0.0;
    if (confusion) ++(*confusion)[truth][pred];
  }
  e.loss /= static_cast<double>(rows.size());
  e.acc /= static_cast<double>(rows.size());
  return e;
}

/// Trains from zero for cfg.epochs; `each_epoch` sees the classifier after
/// every epoch.
template <typename F>
Classifier train_classifier(const Standardized& s, const std::vector<int>& y, std::vector<std::size_t> rows,
                            std::size_t classes, double lr, const ProbeConfig& cfg, std::uint64_t seed, F each_epoch) {
  Classifier clf(s.d, classes);
  std::vector<double> vw(clf.w.size(), 0.0), vb(classes, 0.0);
  std::vector<double> gw(clf.w.size()), gb(classes), p;
  nn::Rng rng(seed);
  const std::size_t per_epoch = (rows.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(per_epoch * cfg.epochs);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(rows.begin(), rows.end());
    for (std::size_t start = 0; start < rows.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(start + cfg.batch_size, rows.size());
      // Half-cosine decay over the whole run.
      const double rate = lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t r = start; r < end; ++r) {
        const auto i = rows[r];
        clf.probs(s, i, p);
        p[static_cast<std::size_t>(y[i])] -= 1.0;
        for (std::size_t j = 0; j < s.d; ++j) {
          const double xj = s.x[i * s.d + j];
          for (std::size_t c = 0; c < classes; ++c) gw[j * classes + c] += xj * p[c];
        }
        for (std::size_t c = 0; c < classes; ++c) gb[c] += p[c];
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t t = 0; t < gw.size(); ++t) {
        vw[t] = cfg.momentum * vw[t] + gw[t] * inv;
        clf.w[t] -= rate * vw[t];
      }
      for (std::size_t c = 0; c < classes; ++c) {
        vb[c] = cfg.momentum * vb[c] + gb[c] * inv;
        clf.b[c] -= rate * vb[c];
      }
    }
    each_epoch(clf);
  }
  return clf;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace

ProbeResult fit_linear_probe(const nn::Tensor<float>& train_x, const std::vector<int>& train_y,
                             const nn::Tensor<float>& val_x, const std::vector<int>& val_y, const ProbeConfig& cfg,
                             std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  if (train_x.rank() != 2 || val_x.rank() != 2 || train_x.dim(1) != val_x.dim(1)) {
    throw ProbeError("feature matrices must be [N, D] with equal D");
  }
  if (train_x.dim(0) != train_y.size() || val_x.dim(0) != val_y.size() || train_y.size() < 5 || val_y.empty()) {
    throw ProbeError("need at least 5 training rows and one validation row with a label each");
  }
  if (cfg.lrs.empty() || cfg.epochs == 0 || cfg.batch_size == 0) throw ProbeError("empty probe settings");
  int max_label = 0;
  for (int l : train_y) max_label = std::max(max_label, l);
  for (int l : val_y) max_label = std::max(max_label, l);
  if (*std::min_element(train_y.begin(), train_y.end()) < 0 || *std::min_element(val_y.begin(), val_y.end()) < 0) {
    throw ProbeError("labels must be non-negative");
  }
  const auto classes = static_cast<std::size_t>(max_label) + 1;

  const std::size_t n = train_x.dim(0), d = train_x.dim(1);
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += train_x.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) inv_std[j] += std::pow(train_x.at(i, j) - mean[j], 2);
  for (auto& s : inv_std) s = 1.0 / std::sqrt(s / static_cast<double>(n) + 1e-12);
  const auto train = standardize(train_x, mean, inv_std);
  const auto val = standardize(val_x, mean, inv_std);

  ProbeResult result;
  auto rows = iota_rows(n);
  nn::Rng split_rng(nn::derive_seed(seed, {0x73706c6974}));
  split_rng.shuffle(rows.begin(), rows.end());
  const std::size_t holdout = std::max<std::size_t>(1, n / 5);
  const std::vector<std::size_t> fit_rows(rows.begin() + static_cast<std::ptrdiff_t>(holdout), rows.end());
  const std::vector<std::size_t> holdout_rows(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(holdout));

  double best_acc = -1.0;
  for (double lr : cfg.lrs) {
    const auto clf = train_classifier(train, train_y, fit_rows, classes, lr, cfg, nn::derive_seed(seed, {1}),
                                      [](const Classifier&) {});
    const double acc = evaluate(clf, train, train_y, holdout_rows).acc;
    result.sweep.emplace_back(lr, acc);
    if (acc > best_acc) {
      best_acc = acc;
      result.best_lr = lr;
    }
  }

  const auto all_train = iota_rows(n);
  const auto all_val = iota_rows(val.n);
  const auto clf = train_classifier(train, train_y, all_train, classes, result.best_lr, cfg, nn::derive_seed(seed, {2}),
                                    [&](const Classifier& c) {
                                      const auto tr = evaluate(c, train, train_y, all_train);
                                      const auto va = evaluate(c, val, val_y, all_val);
                                      result.history.push_back({tr.loss, tr.acc, va.loss, va.acc});
                                    });
  result.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  result.val_top1 = evaluate(clf, val, val_y, all_val, &result.confusion).acc;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

ProbeResult linear_probe(DofaModel<float>& model, const data::Dataset& train, const data::Dataset& val,
                         const ProbeConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_y = require_labels(train);
  const auto val_y = require_labels(val);
  auto encoder = model.encoder_parameters();
  std::vector<nn::Tensor<float>> before;
  for (const auto* p : encoder) before.push_back(p->value());

  const auto train_x = extract_features(model, train);
  const auto val_x = extract_features(model, val);
  auto result = fit_linear_probe(train_x, train_y, val_x, val_y, cfg, seed);

  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const auto a = before[i].data();
    const auto b = encoder[i]->value().data();
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end(),
                    [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); })) {
      throw std::logic_error("probe modified encoder parameter '" + encoder[i]->name() + "'");
    }
    const auto g = encoder[i]->grad().data();
    if (std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; })) {
      throw std::logic_error("encoder parameter '" + encoder[i]->name() + "' received a gradient during probing");
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace dofa::train
