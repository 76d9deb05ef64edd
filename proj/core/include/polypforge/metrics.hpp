#pragma once

#include <span>

namespace polypforge::metrics {

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs whose scores are correctly ordered, ties
/// counting one half. Computed from midranks in O(n log n).
double roc_auc(std::span<const double> scores, std::span<const bool> is_positive);

}  // namespace polypforge::metrics
