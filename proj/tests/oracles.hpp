#pragma once

// Independent reference implementations the tests check the library
// against. Everything here favors obviousness over speed: brute-force
// enumeration, exact maps, O(n^2) scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "matt/core.hpp"
#include "matt/rng.hpp"

namespace oracle {

using matt::ComboKey;
using matt::FeatureValue;

// Every non-empty subset of `features` with size <= max_order, each subset
// sorted, collected into an ordered set for comparison.
inline std::set<std::vector<FeatureValue>> subsets_up_to(
    std::vector<FeatureValue> features, std::uint32_t max_order) {
  std::sort(features.begin(), features.end());
  std::set<std::vector<FeatureValue>> out;
  const std::size_t n = features.size();
  for (std::uint64_t mask = 1; mask < (1ull << n); ++mask) {
    std::vector<FeatureValue> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1ull << i)) subset.push_back(features[i]);
    if (subset.size() <= max_order) out.insert(subset);
  }
  return out;
}

// Rank-based Zipf sampler over {1..n}: P(rank r) proportional to r^-s.
// Inverse-CDF draw, nothing clever.
class ZipfSampler {
 public:
  ZipfSampler(std::uint32_t n, double s) : cdf_(n) {
    double total = 0.0;
    for (std::uint32_t r = 1; r <= n; ++r) {
      total += 1.0 / std::pow(static_cast<double>(r), s);
      cdf_[r - 1] = total;
    }
    for (double& c : cdf_) c /= total;
  }

  std::uint32_t draw(matt::Rng& rng) const {
    double u = rng.next_double();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::uint32_t>(it - cdf_.begin()) + 1;
  }

 private:
  std::vector<double> cdf_;
};

// Exact combination counter; std::map keyed on members gives deterministic
// iteration for free.
class ExactCounter {
 public:
  void observe(const ComboKey& key, std::int64_t delta = 1) {
    counts_[key.members] += delta;
  }

  std::int64_t count(const ComboKey& key) const {
    auto it = counts_.find(key.members);
    return it == counts_.end() ? 0 : it->second;
  }

  const std::map<std::vector<FeatureValue>, std::int64_t>& all() const {
    return counts_;
  }

 private:
  std::map<std::vector<FeatureValue>, std::int64_t> counts_;
};

// Exact distribution over final feature sets for the T-round independent
// Bernoulli growth process. Walks every outcome sequence: at each round,
// probabilities come from the caller (so they match the system under test
// by construction) and all 2^|candidates| selection patterns branch.
// step_probs(path, candidates) -> per-candidate probability.
template <class StepFn>
void enumerate_path_distribution(
    std::vector<matt::FeatureValue> path,
    std::vector<matt::FeatureValue> cand, std::uint32_t steps, double prob,
    StepFn&& step_probs,
    std::map<std::vector<matt::FeatureValue>, double>& out) {
  if (steps == 0 || cand.empty()) {
    std::sort(path.begin(), path.end());
    out[path] += prob;
    return;
  }
  std::vector<double> p = step_probs(path, cand);
  const std::size_t n = cand.size();
  for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
    double branch = prob;
    std::vector<matt::FeatureValue> next_path = path, next_cand;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1ull << i)) {
        branch *= p[i];
        next_path.push_back(cand[i]);
      } else {
        branch *= 1.0 - p[i];
        next_cand.push_back(cand[i]);
      }
    }
    if (branch == 0.0) continue;
    enumerate_path_distribution(std::move(next_path), std::move(next_cand),
                                steps - 1, branch, step_probs, out);
  }
}

}  // namespace oracle
