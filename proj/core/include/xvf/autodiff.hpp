#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph node. Leaves are created from tensors;
// every op in ops.hpp returns a new node holding its forward value and a
// closure that pushes the output gradient to its parents. backward() walks
// the graph in reverse topological order; a node reached along several
// paths receives the sum of the gradients from each path.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xvf/tensor.hpp"

namespace xvf {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool is_leaf = true;

  /// grad, allocated as zeros shaped like value on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var leaf(Tensor value, bool requires_grad = true);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Accumulated gradient; an all-zero tensor if nothing has flowed here yet.
  Tensor grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Creates an interior node. `backward_fn` receives the node after its
/// grad has been filled; it must add into the parents' grad buffers.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
/// Throws ShapeError unless root holds exactly one element.
void backward(const Var& root);

/// While alive, ops on this thread do not record backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;

  const Tensor& value() const { return var.value(); }
};

}  // namespace xvf
