#pragma once

// Binary-classification metrics: AUC by rank statistics (ties count half)
// and clamped log loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "matt/core.hpp"

namespace matt {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Probability that a random positive outranks a random negative. O(n log n)
// via the rank-sum identity; tied scores share their average rank.
inline double auc(std::span<const double> scores,
                  std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw InvalidInputError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (std::uint8_t y : labels) positives += y ? 1 : 0;
  if (positives == 0 || positives == n)
    throw MetricError("auc: undefined on a single-class sample");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks are 1-based; every member of a tie group takes the group mean.
    double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) positive_rank_sum += mean_rank;
    i = j;
  }

  double p = static_cast<double>(positives);
  double negatives = static_cast<double>(n - positives);
  double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * negatives);
}

inline double logloss(std::span<const double> scores,
                      std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw InvalidInputError("logloss: scores and labels differ in length");
  if (scores.empty()) throw InvalidInputError("logloss: empty sample");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double p = std::clamp(scores[i], 1e-7, 1.0 - 1e-7);
    total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace matt
