#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dasgil/tensor.hpp"

namespace dasgil {

// Reverse-mode tape node. Parents are held strongly; the backward closure reads
// the node's accumulated gradient and pushes contributions into its parents.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Vec<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Vec<Scalar>& grad_buffer() {
    if (grad.size() != value.data.size()) grad = Vec<Scalar>::Zero(value.data.size());
    return grad;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    return Var(n);
  }
  static Var parameter(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(n);
  }

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_->requires_grad; }
  Scalar item() const { return node_->value.data[0]; }

  // Accumulated gradient; zeros when the node never received one.
  Vec<Scalar> grad() const {
    if (node_->grad.size() == node_->value.data.size()) return node_->grad;
    return Vec<Scalar>::Zero(node_->value.data.size());
  }

  Var detach() const { return constant(node_->value); }

  Node<Scalar>& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Builds an op node. When no parent needs a gradient the tape is cut here.
template <typename Scalar>
Var<Scalar> make_op(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                    std::function<void(Node<Scalar>&)> backward_fn) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var<Scalar>(n);
}

// Seeds d(root)/d(root) = 1 and propagates to every reachable node that needs a gradient.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  require(root.shape().size() == 1, ErrorCode::ShapeMismatch, "backward root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad_buffer().setConstant(Scalar(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>& n = **it;
    if (n.backward_fn && n.grad.size() == n.value.data.size()) n.backward_fn(n);
  }
}

}  // namespace dasgil
