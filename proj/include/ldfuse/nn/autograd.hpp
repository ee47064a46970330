#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ldfuse/tensor.hpp"

namespace ldfuse::nn {

// One value in a dynamically recorded computation graph. Op results keep
// their parents alive; parameters are leaves that persist across steps.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& out_grad)> backward;

  // Zero-initialized on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  // Direct access for optimizers and checkpoint loading; only for leaves.
  Tensor& mutable_value() { return node_->value; }

  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_op(Tensor value, std::vector<Var> parents,
                     std::function<void(const Tensor&)> backward);

  std::shared_ptr<Node> node_;
};

// Wrap an op result. The backward closure is only kept when some parent
// requires a gradient; it receives d(loss)/d(result) and must accumulate
// into the parents' grad_buffer().
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor&)> backward);

// Reverse-mode sweep from a scalar. Gradients accumulate into leaves.
void backward(const Var& loss);

}  // namespace ldfuse::nn
