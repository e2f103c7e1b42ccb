// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op produces a Var whose node remembers its parents and a closure that
// pushes the node's gradient into them. Nodes that do not depend on any
// gradient-requiring leaf carry no closure, so frozen subgraphs (teacher
// forward, probe feature extraction) cost nothing extra.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dofa/nn/tensor.hpp"

namespace dofa::nn {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer of this node, zero-allocated on first use; nullptr when
  /// the node does not take gradients.
  Tensor<T>* grad_sink();
};

/// Thread-local switch that disables graph recording.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  /// Graph leaf; when `requires_grad` its gradient buffer is allocated eagerly.
  static Var leaf(Tensor<T> value, bool requires_grad);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  void zero_grad();

  const NodePtr& node() const noexcept { return node_; }

 private:
  NodePtr node_;
};

/// Builds the result of an op. The closure is kept only if grad mode is on and
/// some parent requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward);

/// Seeds d(root)/d(root) = 1 for a one-element root and propagates to leaves.
template <typename T>
void backward(const Var<T>& root);

/// Named trainable (or frozen) tensor. Move-only: a Parameter owns its node.
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value, bool trainable = true, bool decay = true);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;

  const std::string& name() const noexcept { return name_; }
  const Var<T>& var() const noexcept { return var_; }
  const Shape& shape() const { return var_.shape(); }
  Tensor<T>& value() { return var_.mutable_value(); }
  const Tensor<T>& value() const { return var_.value(); }
  Tensor<T>& grad() { return var_.mutable_grad(); }
  const Tensor<T>& grad() const { return var_.grad(); }
  bool trainable() const { return var_.requires_grad(); }
  /// Whether decoupled weight decay applies (false for biases, norms, tokens).
  bool decay() const noexcept { return decay_; }
  void zero_grad() { var_.zero_grad(); }

 private:
  std::string name_;
  Var<T> var_;
  bool decay_ = true;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

template <typename T>
void zero_grads(const ParameterList<T>& params);

template <typename T>
std::size_t count_elements(const ParameterList<T>& params);

/// Copies values between two structurally identical parameter lists
/// (matching names and shapes), converting the element type.
template <typename Src, typename Dst>
void copy_parameter_values(const std::vector<Parameter<Src>*>& from, const std::vector<Parameter<Dst>*>& to);

}  // namespace dofa::nn
