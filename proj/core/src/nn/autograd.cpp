#include "polypforge/nn/autograd.hpp"

#include <unordered_set>

#include "polypforge/error.hpp"

namespace polypforge::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

double Var::item() const {
  require(node_ && node_->value.numel() == 1, ErrorKind::size_mismatch,
          "item() needs a one-element tensor");
  return node_->value[0];
}

Var Var::from_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  Var out(std::move(value), needs);
  if (needs) {
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward_fn = std::move(fn);
  }
  return out;
}

void Var::backward() const {
  require(node_ && node_->value.numel() == 1, ErrorKind::size_mismatch,
          "backward() needs a scalar loss");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && child->backward_fn && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad.empty() || !node->backward_fn) continue;
    node->backward_fn(*node);
  }
  // Interior gradients are no longer needed once propagated.
  for (Node* node : order) {
    if (node != node_.get() && node->backward_fn) node->grad = Tensor();
  }
}

}  // namespace polypforge::nn
