#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "polypforge/nn/autograd.hpp"

namespace polypforge::nn {

enum class PadMode { zeros, reflect };

struct ConvOptions {
  int stride = 1;
  int padding = 0;
  PadMode pad_mode = PadMode::zeros;
};

/// x: [N, Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvOptions& opts);

/// Nearest-neighbour upsampling by an integer factor.
Var upsample_nearest(const Var& x, int factor);

/// Per-(sample, channel) normalization over H×W. gamma/beta may be undefined.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
  bool use_batch_stats = true;
  bool update_running = true;
};

/// Per-channel normalization over N×H×W (batch statistics) or with the
/// running estimates when `use_batch_stats` is false.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);

/// Σ wᵢ·termᵢ over scalar terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

Var max_pool2d(const Var& x, int kernel, int stride, int padding);
/// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);
Var reshape(const Var& x, Shape shape);

/// x: [N, K], weight: [M, K], bias: [M] -> [N, M]
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Mean softmax cross-entropy. Optional per-class weights (weighted mean).
Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const double> class_weights = {});

/// mean((x - target)²)
Var mse_to(const Var& x, double target);
/// mean(|a - b|)
Var l1_loss(const Var& a, const Var& b);
/// Mean binary cross-entropy on logits against a constant target.
Var bce_with_logits(const Var& logits, double target);

/// Row-wise softmax of a [N, C] tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace polypforge::nn
