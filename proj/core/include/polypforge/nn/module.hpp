#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "polypforge/nn/ops.hpp"
#include "polypforge/rng.hpp"

namespace polypforge::nn {

struct NamedVar {
  std::string name;
  Var var;
};

/// Owns parameters, non-trainable buffers and child modules. Names are
/// dot-separated paths, stable across runs, and are the serialization keys.
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedVar> named_parameters() const;
  std::vector<NamedVar> named_buffers() const;
  std::vector<Var> parameters() const;
  std::int64_t parameter_count() const;

  void train(bool on = true);
  void eval() { train(false); }
  bool is_training() const noexcept { return training_; }

  void zero_grad();

 protected:
  Var register_parameter(std::string name, Tensor value);
  Var register_buffer(std::string name, Tensor value);

  template <class M>
  std::shared_ptr<M> register_module(std::string name, std::shared_ptr<M> module) {
    children_.emplace_back(std::move(name), module);
    return module;
  }

 private:
  void collect(const std::string& prefix, bool params, std::vector<NamedVar>& out) const;

  std::vector<NamedVar> params_;
  std::vector<NamedVar> buffers_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
  bool training_ = true;
};

enum class Init { kaiming_normal, normal_002 };

class Conv2d : public Module {
 public:
  struct Options {
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    PadMode pad_mode = PadMode::zeros;
    bool bias = true;
  };

  Conv2d(const Options& opts, Rng& rng, Init init);
  Var forward(const Var& x) const;
  const Options& options() const noexcept { return opts_; }

 private:
  Options opts_;
  Var weight_;
  Var bias_;
};

class Linear : public Module {
 public:
  Linear(int in_features, int out_features, Rng& rng, Init init);
  Var forward(const Var& x) const;

 private:
  Var weight_;
  Var bias_;
};

class InstanceNorm2d : public Module {
 public:
  InstanceNorm2d(int channels, bool affine);
  Var forward(const Var& x) const;

 private:
  Var gamma_;
  Var beta_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1);
  /// Training mode uses batch statistics and updates running estimates;
  /// eval mode uses the running estimates. `freeze_running` forces batch
  /// statistics without touching the running estimates.
  Var forward(const Var& x, bool freeze_running = false) const;

 private:
  Var gamma_;
  Var beta_;
  Var running_mean_;
  Var running_var_;
  double momentum_;
};

}  // namespace polypforge::nn
