#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "polypforge/nn/autograd.hpp"
#include "polypforge/rng.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "pf");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

/// Compares the analytic gradient of `loss` with central differences on
/// `samples` randomly chosen scalar coordinates spread over `params`.
/// Each estimate compares steps h and h/2, retrying with h/10 and h/100 while
/// they disagree. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const std::function<polypforge::nn::Var()>& loss,
                               const std::vector<polypforge::nn::Var>& params, int samples,
                               polypforge::Rng& rng, double step = 1e-5, double floor = 1e-7);

polypforge::nn::Tensor random_tensor(polypforge::nn::Shape shape, polypforge::Rng& rng, double scale = 1.0);

}  // namespace testing
