#include "polypforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "polypforge/error.hpp"

namespace polypforge::metrics {

double roc_auc(std::span<const double> scores, std::span<const bool> is_positive) {
  require(scores.size() == is_positive.size(), ErrorKind::size_mismatch,
          "roc_auc needs one label per score");
  for (double s : scores) require(!std::isnan(s), ErrorKind::non_finite, "roc_auc score is NaN");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the midrank is an integer, so the whole statistic stays exact.
  std::int64_t rank_sum_x2 = 0;
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const auto midrank_x2 = static_cast<std::int64_t>(i + 1 + j);  // (i+1) + j, 1-based ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (is_positive[order[k]]) {
        rank_sum_x2 += midrank_x2;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::empty_input,
          "AUC needs at least one positive and one negative example");
  const std::int64_t u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / static_cast<double>(2 * n_pos * n_neg);
}

}  // namespace polypforge::metrics
