#pragma once

#include <deque>
#include <functional>
#include <memory>

#include "usdn/core/tensor.hpp"

namespace usdn::ad {

// One value in the computation graph. Interior nodes live in a Tape and are
// discarded after the step; parameter leaves live in the model's parameter
// store and keep their gradient buffers across steps (gradients accumulate
// until zeroed).
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::function<void()> backward;  // empty for leaves
  bool requires_grad = false;

  const std::vector<int64_t>& shape() const { return value.shape(); }
  int64_t dim(size_t i) const { return value.dim(i); }
};

// Dynamic tape: nodes are appended in forward order, so reverse creation
// order is a valid topological order for the backward sweep.
template <typename T>
class Tape {
 public:
  Node<T>* make(Tensor<T> value, bool requires_grad) {
    nodes_.emplace_back();
    Node<T>* n = &nodes_.back();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled_;
    if (n->requires_grad) n->grad = Tensor<T>(n->value.shape());
    return n;
  }

  // Leaf with no producer (inputs, constants).
  Node<T>* leaf(Tensor<T> value, bool requires_grad = false) {
    return make(std::move(value), requires_grad);
  }

  void backward(Node<T>* root) {
    if (root->value.numel() != 1)
      throw ContractError("backward root must be scalar, got " + root->value.shape_str());
    if (!root->requires_grad)
      throw ContractError("backward root does not require grad");
    root->grad.fill(T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backward && it->requires_grad) it->backward();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

 private:
  std::deque<Node<T>> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace usdn::ad
