#include "polypforge/nn/module.hpp"

#include <cmath>

namespace polypforge::nn {

Var Module::register_parameter(std::string name, Tensor value) {
  Var v(std::move(value), true);
  params_.push_back({std::move(name), v});
  return v;
}

Var Module::register_buffer(std::string name, Tensor value) {
  Var v(std::move(value), false);
  buffers_.push_back({std::move(name), v});
  return v;
}

void Module::collect(const std::string& prefix, bool params, std::vector<NamedVar>& out) const {
  for (const auto& nv : params ? params_ : buffers_) out.push_back({prefix + nv.name, nv.var});
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", params, out);
}

std::vector<NamedVar> Module::named_parameters() const {
  std::vector<NamedVar> out;
  collect("", true, out);
  return out;
}

std::vector<NamedVar> Module::named_buffers() const {
  std::vector<NamedVar> out;
  collect("", false, out);
  return out;
}

std::vector<Var> Module::parameters() const {
  std::vector<Var> out;
  for (auto& nv : named_parameters()) out.push_back(nv.var);
  return out;
}

std::int64_t Module::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& nv : named_parameters()) n += nv.var.value().numel();
  return n;
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

void Module::zero_grad() {
  for (auto& nv : named_parameters()) nv.var.zero_grad();
}

namespace {

void fill_init(Tensor& t, std::int64_t fan_in, Rng& rng, Init init) {
  const double stddev = init == Init::kaiming_normal
                            ? std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)))
                            : 0.02;
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
}

}  // namespace

Conv2d::Conv2d(const Options& opts, Rng& rng, Init init) : opts_(opts) {
  Tensor w({opts.out_channels, opts.in_channels, opts.kernel, opts.kernel});
  fill_init(w, std::int64_t{opts.in_channels} * opts.kernel * opts.kernel, rng, init);
  weight_ = register_parameter("weight", std::move(w));
  if (opts.bias) bias_ = register_parameter("bias", Tensor({opts.out_channels}, 0.0));
}

Var Conv2d::forward(const Var& x) const {
  return conv2d(x, weight_, bias_, {opts_.stride, opts_.padding, opts_.pad_mode});
}

Linear::Linear(int in_features, int out_features, Rng& rng, Init init) {
  Tensor w({out_features, in_features});
  fill_init(w, in_features, rng, init);
  weight_ = register_parameter("weight", std::move(w));
  bias_ = register_parameter("bias", Tensor({out_features}, 0.0));
}

Var Linear::forward(const Var& x) const { return linear(x, weight_, bias_); }

InstanceNorm2d::InstanceNorm2d(int channels, bool affine) {
  if (affine) {
    gamma_ = register_parameter("weight", Tensor({channels}, 1.0));
    beta_ = register_parameter("bias", Tensor({channels}, 0.0));
  }
}

Var InstanceNorm2d::forward(const Var& x) const { return instance_norm(x, gamma_, beta_); }

BatchNorm2d::BatchNorm2d(int channels, double momentum) : momentum_(momentum) {
  gamma_ = register_parameter("weight", Tensor({channels}, 1.0));
  beta_ = register_parameter("bias", Tensor({channels}, 0.0));
  running_mean_ = register_buffer("running_mean", Tensor({channels}, 0.0));
  running_var_ = register_buffer("running_var", Tensor({channels}, 1.0));
}

Var BatchNorm2d::forward(const Var& x, bool freeze_running) const {
  BatchNormState state;
  // Buffers are shared handles.
  auto rm = running_mean_;
  auto rv = running_var_;
  state.running_mean = &rm.mutable_value();
  state.running_var = &rv.mutable_value();
  state.momentum = momentum_;
  state.use_batch_stats = is_training() || freeze_running;
  state.update_running = is_training() && !freeze_running;
  return batch_norm(x, gamma_, beta_, state);
}

}  // namespace polypforge::nn
