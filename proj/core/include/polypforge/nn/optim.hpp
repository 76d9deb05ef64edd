#pragma once

#include <string>
#include <vector>

#include "polypforge/nn/module.hpp"

namespace polypforge::nn {

class Optimizer {
 public:
  explicit Optimizer(std::vector<NamedVar> params, double lr)
      : params_(std::move(params)), lr_(lr) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;
  void zero_grad();

  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) noexcept { lr_ = lr; }

  /// Mutable views of the internal state, keyed by parameter name, so that
  /// checkpoints can capture and restore it.
  virtual std::vector<std::pair<std::string, Tensor*>> state() = 0;

 protected:
  std::vector<NamedVar> params_;
  double lr_;
};

/// Stochastic gradient descent with classical momentum and L2 weight decay.
class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<NamedVar> params, double lr, double momentum, double weight_decay);
  void step() override;
  std::vector<std::pair<std::string, Tensor*>> state() override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<NamedVar> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step() override;
  std::vector<std::pair<std::string, Tensor*>> state() override;

 private:
  double beta1_, beta2_, eps_;
  Tensor step_count_{{1}, 0.0};
  std::vector<Tensor> m_, v_;
};

}  // namespace polypforge::nn
