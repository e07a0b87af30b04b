#include "jekyll/nn/var.hpp"

#include <stdexcept>
#include <unordered_set>

namespace jekyll::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor& Var::grad_buffer() const {
  if (node_->grad.empty() || !node_->grad.same_shape(node_->value)) {
    node_->grad = Tensor::zeros_like(node_->value);
  }
  return node_->grad;
}

void Var::zero_grad() const {
  if (!node_->grad.empty()) node_->grad.fill(Real(0));
}

Var Var::from_op(Tensor value, std::vector<Var> inputs, detail::BackwardFn fn) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.node_) node->inputs.push_back(in.node_);
    }
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void Var::backward() const {
  if (!node_ || !node_->requires_grad) {
    throw std::logic_error("backward() called on a value that does not require grad");
  }
  if (node_->value.size() != 1) {
    throw std::logic_error("backward() needs a scalar root, got " + node_->value.shape_string());
  }

  // Iterative post-order DFS gives a topological order. Shared ownership keeps
  // every node alive while the sweep releases graph edges.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      std::shared_ptr<detail::Node> child = top.first->inputs[top.second++];
      if (child->requires_grad && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad = Tensor::zeros_like(node_->value);
  node_->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = it->get();
    if (n->backward && !n->grad.empty()) {
      n->backward(n->value, n->grad);
    }
    if (n->backward) {
      // Interior node: drop graph references and the gradient buffer.
      n->backward = nullptr;
      n->inputs.clear();
      n->grad = Tensor();
    }
  }
}

}  // namespace jekyll::nn
