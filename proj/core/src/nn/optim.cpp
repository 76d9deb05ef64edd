#include "polypforge/nn/optim.hpp"

#include <cmath>

namespace polypforge::nn {

void Optimizer::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

Sgd::Sgd(std::vector<NamedVar> params, double lr, double momentum, double weight_decay)
    : Optimizer(std::move(params), lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.var.shape(), 0.0);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i].var;
    if (!p.has_grad()) continue;
    Tensor& w = p.mutable_value();
    const Tensor& g = p.grad();
    Tensor& vel = velocity_[i];
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      const double d = g[j] + weight_decay_ * w[j];
      vel[j] = momentum_ * vel[j] + d;
      w[j] -= lr_ * vel[j];
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> Sgd::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].name + ".velocity", &velocity_[i]);
  }
  return out;
}

Adam::Adam(std::vector<NamedVar> params, double lr, double beta1, double beta2, double eps)
    : Optimizer(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape(), 0.0);
    v_.emplace_back(p.var.shape(), 0.0);
  }
}

void Adam::step() {
  step_count_[0] += 1.0;
  const double t = step_count_[0];
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i].var;
    if (!p.has_grad()) continue;
    Tensor& w = p.mutable_value();
    const Tensor& g = p.grad();
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> Adam::state() {
  std::vector<std::pair<std::string, Tensor*>> out{{"step", &step_count_}};
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].name + ".m", &m_[i]);
    out.emplace_back(params_[i].name + ".v", &v_[i]);
  }
  return out;
}

}  // namespace polypforge::nn
