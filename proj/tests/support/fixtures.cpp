#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <unistd.h>

namespace testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

GradCheckResult gradient_check(const std::function<polypforge::nn::Var()>& loss,
                               const std::vector<polypforge::nn::Var>& params, int samples,
                               polypforge::Rng& rng, double step, double floor) {
  using polypforge::nn::Var;
  for (auto p : params) p.zero_grad();
  Var l = loss();
  l.backward();
  std::vector<polypforge::nn::Tensor> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : polypforge::nn::Tensor(p.shape()));
  }
  std::int64_t total = 0;
  for (const auto& p : params) total += p.value().numel();

  GradCheckResult r;
  for (int s = 0; s < samples; ++s) {
    std::int64_t flat = rng.uniform_int(0, total - 1);
    std::size_t which = 0;
    while (flat >= params[which].value().numel()) flat -= params[which].value().numel(), ++which;
    Var p = params[which];
    double& v = p.mutable_value().data()[flat];
    const double saved = v;
    auto central = [&](double h) {
      v = saved + h;
      const double up = loss().item();
      v = saved - h;
      const double down = loss().item();
      v = saved;
      return (up - down) / (2 * h);
    };
    // A ReLU or |.| kink inside the stencil makes the estimate depend on h;
    // shrink until two step sizes agree to within roundoff.
    const double scale = std::abs(l.item());
    double numeric = 0.0;
    for (double h = step; h >= step * 1e-2; h /= 10) {
      const double coarse = central(h);
      numeric = central(h / 2);
      const double roundoff = 8 * std::numeric_limits<double>::epsilon() * scale / h;
      if (std::abs(coarse - numeric) <= 1e-5 * std::max(std::abs(numeric), floor) + roundoff) break;
    }
    const double a = analytic[which].data()[flat];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, rel);
    ++r.checked;
  }
  return r;
}

polypforge::nn::Tensor random_tensor(polypforge::nn::Shape shape, polypforge::Rng& rng, double scale) {
  polypforge::nn::Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace testing
