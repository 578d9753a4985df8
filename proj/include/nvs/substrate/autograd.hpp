#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nvs/substrate/tensor.hpp"

namespace nvs::ad {

template <class T>
class Var;

template <class T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>&)>;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // accumulated by backward() for leaves
  bool requires_grad = false;
  bool first_order_only = false;
  std::vector<Var<T>> parents;
  BackwardFn<T> backward;
  std::string name;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : prev_(grad_mode_flag()) { grad_mode_flag() = enabled; }
  ~GradModeGuard() { grad_mode_flag() = prev_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

// Handle to a node of the computation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false, std::string name = {})
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->name = std::move(name);
  }

  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<T> value, std::string name) { return Var(std::move(value), true, std::move(name)); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t numel() const { return node_->value.numel(); }
  int rank() const { return node_->value.rank(); }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  bool is_leaf() const { return !node_->backward; }
  const std::string& name() const { return node_->name; }

  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.numel() > 0; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Var detach() const { return Var::constant(node_->value); }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

  Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

// Wraps an op result, recording the graph edge only when needed.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, BackwardFn<T> fn,
                   bool first_order_only = false) {
  bool need = false;
  if (grad_enabled())
    for (const auto& p : parents) need = need || p.requires_grad();
  if (!need) return Var<T>::constant(std::move(value));
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->first_order_only = first_order_only;
  node->parents = std::move(parents);
  node->backward = std::move(fn);
  return Var<T>(std::move(node));
}

template <class T>
Var<T> accumulate_grad(const Var<T>& a, const Var<T>& b);

namespace detail {

template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].node();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace detail

// Gradients of `output` with respect to `inputs`. Only nodes lying on a path to
// one of the inputs are visited. With create_graph the returned gradients are
// themselves differentiable.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         Var<T> grad_output = {}, bool create_graph = false) {
  NVS_CHECK(output.defined(), "undefined output");
  std::vector<Var<T>> result(inputs.size());
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      result[i] = Var<T>::constant(Tensor<T>::zeros(inputs[i].shape()));
    return result;
  }
  if (!grad_output.defined()) {
    NVS_CHECK(output.numel() == 1, "implicit grad_output requires a scalar output");
    grad_output = Var<T>::constant(Tensor<T>::ones(output.shape()));
  }

  auto order = detail::topo_order(output.node());
  std::unordered_set<Node<T>*> targets;
  for (const auto& v : inputs) targets.insert(v.node());
  std::unordered_set<Node<T>*> needed;
  for (Node<T>* n : order) {
    bool need = targets.count(n) > 0;
    for (const auto& p : n->parents) need = need || needed.count(p.node());
    if (need) needed.insert(n);
  }

  std::unordered_map<Node<T>*, Var<T>> grads;
  grads[output.node()] = grad_output;
  GradModeGuard mode(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!needed.count(n)) continue;
    auto g = grads.find(n);
    if (g == grads.end() || !n->backward) continue;
    if (create_graph && n->first_order_only)
      throw ContractError("double backward requested through first-order-only op");
    Var<T> gout = g->second;
    auto pgrads = n->backward(gout);
    for (std::size_t i = 0; i < n->parents.size() && i < pgrads.size(); ++i) {
      Node<T>* p = n->parents[i].node();
      if (!p || !needed.count(p) || !pgrads[i].defined()) continue;
      auto& slot = grads[p];
      slot = slot.defined() ? accumulate_grad(slot, pgrads[i]) : pgrads[i];
    }
    if (!targets.count(n)) grads.erase(n);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto g = grads.find(inputs[i].node());
    result[i] = g != grads.end() ? g->second : Var<T>::constant(Tensor<T>::zeros(inputs[i].shape()));
  }
  return result;
}

// Accumulates d(loss)/d(param) into each param's grad buffer. Parameters not
// listed never receive gradient, which keeps optimizer groups isolated.
template <class T>
void backward(const Var<T>& loss, const std::vector<Var<T>>& params) {
  auto gs = grad(loss, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<T> p = params[i];
    if (!p.has_grad())
      p.mutable_grad() = gs[i].value();
    else
      p.mutable_grad() += gs[i].value();
  }
}

}  // namespace nvs::ad
