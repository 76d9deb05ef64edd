#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "polypforge/nn/tensor.hpp"

namespace polypforge::nn {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

/// Handle to a value in the dynamic computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  /// Scalar value; the tensor must hold exactly one element.
  double item() const;

  /// Reverse-mode sweep seeded with d(this)/d(this) = 1. Only valid on a
  /// one-element tensor.
  void backward() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

  /// Builds an interior node. If gradient recording is off, or no input needs
  /// a gradient, the result is a constant and `fn` is dropped.
  static Var from_op(Tensor value, std::vector<Var> inputs,
                     std::function<void(Node&)> fn);

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace polypforge::nn
