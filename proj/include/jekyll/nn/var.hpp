#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "jekyll/nn/tensor.hpp"

namespace jekyll::nn {

class Var;

namespace detail {

using BackwardFn = std::function<void(const Tensor& value, const Tensor& grad)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Handle to a node of the autograd tape. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  // Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer() const;
  void zero_grad() const;

  // Reverse-mode sweep from a scalar. Releases the intermediate graph.
  void backward() const;

  Var detach() const { return Var(node_->value, false); }
  explicit operator bool() const { return static_cast<bool>(node_); }
  detail::Node* node() const { return node_.get(); }

  static Var from_op(Tensor value, std::vector<Var> inputs, detail::BackwardFn fn);

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph construction in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace jekyll::nn
