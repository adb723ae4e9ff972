#include "xvf/autodiff.hpp"

#include <unordered_set>

#include "xvf/error.hpp"

namespace xvf {

namespace {
thread_local bool t_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Tensor Var::grad() const {
  if (node_->grad.shape() == node_->value.shape()) return node_->grad;
  return Tensor(node_->value.shape());
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  require<NumericError>(value.all_finite(), "non-finite value produced by forward op, shape ",
                        shape_string(value.shape()));
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  require<ShapeError>(root.defined() && root.value().size() == 1,
                      "backward() needs a scalar root, got shape ",
                      root.defined() ? shape_string(root.shape()) : "<undefined>");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->is_leaf) node->grad = Tensor(node->value.shape());
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

}  // namespace xvf
