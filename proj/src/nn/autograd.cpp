#include "ldfuse/nn/autograd.hpp"

#include <unordered_set>

#include "ldfuse/errors.hpp"

namespace ldfuse::nn {

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& p : parents) {
    if (p.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (Var& p : parents) node->parents.push_back(p.shared());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
  // Interior gradients are not needed after the sweep.
  for (Node* node : order) {
    if (node->backward) node->grad = Tensor();
  }
}

}  // namespace ldfuse::nn
