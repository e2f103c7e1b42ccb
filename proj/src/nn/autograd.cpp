// SPDX-License-Identifier: Apache-2.0

#include "dofa/nn/autograd.hpp"

#include <algorithm>
#include <unordered_set>

namespace dofa::nn {

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) noexcept { grad_mode_enabled = on; }

template <typename T>
Tensor<T>* Node<T>::grad_sink() {
  if (!requires_grad) return nullptr;
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return &grad;
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad = Tensor<T>(node->value.shape());
  return Var(std::move(node));
}

template <typename T>
void Var<T>::zero_grad() {
  if (!node_->requires_grad) return;
  if (node_->grad.empty()) {
    node_->grad = Tensor<T>(node_->value.shape());
  } else {
    node_->grad.fill(T{0});
  }
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (GradMode::enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Var<T>& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().numel() != 1) {
    throw ShapeError("backward() needs a one-element root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_sink()->fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    // Interior gradients are consumed; leaves keep theirs.
    node->grad = Tensor<T>();
  }
}

template <typename T>
Parameter<T>::Parameter(std::string name, Tensor<T> value, bool trainable, bool decay)
    : name_(std::move(name)), var_(Var<T>::leaf(std::move(value), trainable)), decay_(decay) {
  if (!trainable) var_.mutable_grad() = Tensor<T>(var_.shape());
}

template <typename T>
void zero_grads(const ParameterList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename T>
std::size_t count_elements(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (auto* p : params) n += p->value().numel();
  return n;
}

template <typename Src, typename Dst>
void copy_parameter_values(const std::vector<Parameter<Src>*>& from, const std::vector<Parameter<Dst>*>& to) {
  if (from.size() != to.size()) throw ShapeError("parameter lists differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->name() != to[i]->name() || from[i]->shape() != to[i]->shape()) {
      throw ShapeError("parameter mismatch: " + from[i]->name() + " vs " + to[i]->name());
    }
    auto src = from[i]->value().data();
    auto dst = to[i]->value().data();
    std::transform(src.begin(), src.end(), dst.begin(), [](Src v) { return static_cast<Dst>(v); });
  }
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template class Parameter<float>;
template class Parameter<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);
template void zero_grads(const ParameterList<float>&);
template void zero_grads(const ParameterList<double>&);
template std::size_t count_elements(const ParameterList<float>&);
template std::size_t count_elements(const ParameterList<double>&);
template void copy_parameter_values(const std::vector<Parameter<float>*>&, const std::vector<Parameter<float>*>&);
template void copy_parameter_values(const std::vector<Parameter<float>*>&, const std::vector<Parameter<double>*>&);
template void copy_parameter_values(const std::vector<Parameter<double>*>&, const std::vector<Parameter<float>*>&);
template void copy_parameter_values(const std::vector<Parameter<double>*>&, const std::vector<Parameter<double>*>&);

}  // namespace dofa::nn
