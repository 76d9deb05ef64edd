#include <cmath>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "polypforge/error.hpp"
#include "polypforge/nn/archive.hpp"
#include "polypforge/nn/module.hpp"
#include "polypforge/nn/ops.hpp"
#include "polypforge/nn/optim.hpp"

using namespace polypforge;
using namespace polypforge::nn;

namespace {

// Direct seven-loop convolution used as the forward oracle.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, bool reflect) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), k = w.dim(2);
  const auto ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor y({n, co, ho, wo});
  auto refl = [](std::int64_t i, std::int64_t len) {
    if (i < 0) return -i;
    if (i >= len) return 2 * (len - 1) - i;
    return i;
  };
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                std::int64_t iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
                  if (!reflect) continue;
                  iy = refl(iy, h);
                  ix = refl(ix, wd);
                }
                acc += x.at(s, ci, iy, ix) * w.at(o, ci, ky, kx);
              }
          y.at(s, o, oy, ox) = acc;
        }
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Weighted sum of all entries with fixed random weights, so every output
// element contributes a distinct gradient.
Var probe(const Var& y, const Tensor& weights) {
  Var w(weights);
  Var flat = reshape(y, {1, y.value().numel()});
  return linear(flat, reshape(w, {1, weights.numel()}), Var());
}

}  // namespace

TEST_CASE("conv2d forward matches the direct loop") {
  Rng rng(3);
  for (bool reflect : {false, true}) {
    for (int stride : {1, 2}) {
      Tensor x = testing::random_tensor({2, 3, 7, 6}, rng);
      Tensor w = testing::random_tensor({4, 3, 3, 3}, rng);
      Tensor b = testing::random_tensor({4}, rng);
      ConvOptions o{stride, 1, reflect ? PadMode::reflect : PadMode::zeros};
      Var y = conv2d(Var(x), Var(w), Var(b), o);
      CHECK(max_abs_diff(y.value(), naive_conv(x, w, b, stride, 1, reflect)) < 1e-12);
    }
  }
}

TEST_CASE("finite differences agree with every differentiable op") {
  Rng rng(11);
  auto check = [&](const char* name, std::function<Var(const Var&)> f, Shape in_shape, double floor = 1e-7) {
    CAPTURE(name);
    Var x(testing::random_tensor(in_shape, rng), true);
    const Tensor y0 = f(x).value();
    Tensor weights = testing::random_tensor(y0.shape(), rng);
    auto r = testing::gradient_check([&] { return probe(f(x), weights); }, {x}, 40, rng, 1e-6, floor);
    CHECK(r.max_rel_error < 1e-5);
  };

  Var w(testing::random_tensor({4, 3, 3, 3}, rng), true);
  Var b(testing::random_tensor({4}, rng), true);
  check("conv zeros", [&](const Var& x) { return conv2d(x, w, b, {2, 1, PadMode::zeros}); }, {2, 3, 6, 5});
  check("conv reflect", [&](const Var& x) { return conv2d(x, w, b, {1, 1, PadMode::reflect}); }, {2, 3, 5, 5});
  check("upsample", [](const Var& x) { return upsample_nearest(x, 2); }, {2, 2, 3, 3});
  Var g(testing::random_tensor({3}, rng), true), be(testing::random_tensor({3}, rng), true);
  check("instance norm", [&](const Var& x) { return instance_norm(x, g, be); }, {2, 3, 4, 4});
  Tensor rm({3}), rv({3}, 1.0);
  BatchNormState st{&rm, &rv};
  check("batch norm", [&](const Var& x) { return batch_norm(x, g, be, st); }, {3, 3, 3, 3});
  check("leaky relu", [](const Var& x) { return leaky_relu(x, 0.2); }, {2, 5});
  check("tanh", [](const Var& x) { return nn::tanh(x); }, {3, 4});
  check("max pool", [](const Var& x) { return max_pool2d(x, 3, 2, 1); }, {2, 2, 6, 6});
  check("global pool", [](const Var& x) { return global_avg_pool(x); }, {2, 3, 4, 4});
  Var lw(testing::random_tensor({3, 5}, rng), true), lb(testing::random_tensor({3}, rng), true);
  check("linear", [&](const Var& x) { return linear(x, lw, lb); }, {4, 5});

  // Parameter gradients for conv, linear and the norms.
  Var x(testing::random_tensor({2, 3, 5, 5}, rng));
  Tensor probe_w = testing::random_tensor({2, 4, 5, 5}, rng);
  auto r = testing::gradient_check(
      [&] { return probe(instance_norm(conv2d(x, w, b, {1, 1, PadMode::reflect}), Var(), Var()), probe_w); },
      {w, b}, 40, rng);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("scalar losses and their gradients") {
  Rng rng(5);
  Var logits(testing::random_tensor({4, 3}, rng), true);
  std::vector<int> labels{0, 2, 1, 2};
  // Hand-rolled log-softmax oracle.
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    double mx = -1e300, s = 0.0;
    for (int c = 0; c < 3; ++c) mx = std::max(mx, logits.value()[i * 3 + c]);
    for (int c = 0; c < 3; ++c) s += std::exp(logits.value()[i * 3 + c] - mx);
    expect += -(logits.value()[i * 3 + labels[i]] - mx - std::log(s));
  }
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx(expect / 4).epsilon(1e-12));

  std::vector<double> cw{1.0, 2.0, 0.5};
  auto r = testing::gradient_check([&] { return cross_entropy(logits, labels, cw); }, {logits}, 12, rng);
  CHECK(r.max_rel_error < 1e-6);

  Var a(testing::random_tensor({2, 3, 2, 2}, rng), true), t(testing::random_tensor({2, 3, 2, 2}, rng));
  CHECK(testing::gradient_check([&] { return mse_to(a, 1.0); }, {a}, 10, rng).max_rel_error < 1e-6);
  CHECK(testing::gradient_check([&] { return l1_loss(a, t); }, {a}, 10, rng).max_rel_error < 1e-6);
  CHECK(testing::gradient_check([&] { return bce_with_logits(a, 1.0); }, {a}, 10, rng).max_rel_error < 1e-6);
  CHECK(testing::gradient_check([&] { return bce_with_logits(a, 0.0); }, {a}, 10, rng).max_rel_error < 1e-6);

  Tensor zeros({4}), ones({4}, 1.0);
  CHECK(mse_to(Var(ones), 1.0).item() == 0.0);
  CHECK(mse_to(Var(zeros), 0.0).item() == 0.0);
  CHECK(l1_loss(Var(zeros), Var(ones)).item() == 1.0);
  CHECK(bce_with_logits(Var(zeros), 1.0).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("softmax rows sum to one even for extreme logits") {
  Tensor logits({3, 4}, std::vector<double>{0, 0, 0, 0, 1000, -1000, 3, 2, -700, -701, -702, -703});
  Tensor p = softmax_rows(logits);
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) {
      CHECK(p[i * 4 + c] >= 0.0);
      s += p[i * 4 + c];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("batch norm running statistics") {
  Rng rng(2);
  BatchNorm2d bn(2, 0.5);
  bn.train();
  Var x(testing::random_tensor({4, 2, 3, 3}, rng, 2.0));
  bn.forward(x);
  auto buffers = bn.named_buffers();
  REQUIRE(buffers.size() == 2);
  // Running mean moves halfway from 0 to the batch mean.
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) mean += x.value()[(n * 2 + c) * 9 + i];
    mean /= 36;
    CHECK(buffers[0].var.value()[c] == doctest::Approx(0.5 * mean).epsilon(1e-12));
  }
  const Tensor before = buffers[0].var.value();
  bn.forward(x, true);
  CHECK(buffers[0].var.value() == before);
  bn.eval();
  bn.forward(x);
  CHECK(buffers[0].var.value() == before);
}

TEST_CASE("adam matches a hand-rolled update") {
  Var p(Tensor({2}, std::vector<double>{1.0, -2.0}), true);
  Adam opt({{"p", p}}, 0.1, 0.5, 0.9, 1e-8);
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int step = 1; step <= 3; ++step) {
    opt.zero_grad();
    Var loss = mse_to(p, 0.0);
    loss.backward();
    for (int i = 0; i < 2; ++i) {
      const double g = ref[i];  // d/dp mean(p^2) = p for two elements
      m[i] = 0.5 * m[i] + 0.5 * g;
      v[i] = 0.9 * v[i] + 0.1 * g * g;
      const double mh = m[i] / (1 - std::pow(0.5, step)), vh = v[i] / (1 - std::pow(0.9, step));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(p.value()[1] == doctest::Approx(ref[1]).epsilon(1e-12));
  }
}

TEST_CASE("archive round trip and corruption detection") {
  Rng rng(9);
  Conv2d conv({3, 4, 3, 1, 1, PadMode::zeros, true}, rng, Init::normal_002);
  Archive a;
  a.meta["kind"] = "test";
  store_module(a, conv, "c.");
  const auto bytes = a.to_bytes();
  Archive b = Archive::from_bytes(bytes);
  CHECK(b.meta["kind"] == "test");

  Rng other(10);
  Conv2d conv2({3, 4, 3, 1, 1, PadMode::zeros, true}, other, Init::normal_002);
  CHECK(module_hash(conv) != module_hash(conv2));
  load_module(b, conv2, "c.");
  CHECK(module_hash(conv) == module_hash(conv2));

  auto corrupt = bytes;
  corrupt.back() ^= 0x01;
  CHECK_THROWS_AS(Archive::from_bytes(corrupt), Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(Archive::from_bytes(truncated), Error);

  Conv2d wrong({3, 5, 3, 1, 1, PadMode::zeros, true}, rng, Init::normal_002);
  CHECK_THROWS_AS(load_module(b, wrong, "c."), Error);
}

TEST_CASE("no-grad mode records nothing") {
  Var w(Tensor({2, 2}, 1.0), true);
  NoGradGuard guard;
  Var y = linear(Var(Tensor({1, 2}, 1.0)), w, Var());
  CHECK_FALSE(y.requires_grad());
}
