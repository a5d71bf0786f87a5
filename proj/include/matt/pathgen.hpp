#pragma once

// Confidence-guided inference paths. For each instance, K feature subsets
// ("paths") are grown over T rounds: every remaining candidate feature is
// kept or deferred by an independent Bernoulli draw whose probability is its
// normalized confidence against the path so far. Unselected features are
// masked and each path's masked score enters a confidence-weighted average.
// Low-confidence (rare or noisy) feature interactions thereby get sampled
// out of the ensemble instead of silently corrupting one forward pass.
//
// Determinism contract: every path draws from its own rng stream derived
// from (seed, instance id, path index), candidates are visited in ascending
// field order, and aggregation reduces in path order. Results are identical
// under any evaluation parallelism.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "matt/core.hpp"
#include "matt/rng.hpp"
#include "matt/scorer.hpp"
#include "matt/sketch.hpp"

namespace matt {

enum class PredictMode { full, rhp, rcr, rmr, baseline };
enum class WeightRule { min_pair, geomean };

inline PredictMode parse_mode(const std::string& s) {
  if (s == "full") return PredictMode::full;
  if (s == "rhp") return PredictMode::rhp;
  if (s == "rcr") return PredictMode::rcr;
  if (s == "rmr") return PredictMode::rmr;
  if (s == "baseline") return PredictMode::baseline;
  throw ConfigError("unknown mode: " + s);
}

inline const char* mode_name(PredictMode m) {
  switch (m) {
    case PredictMode::full: return "full";
    case PredictMode::rhp: return "rhp";
    case PredictMode::rcr: return "rcr";
    case PredictMode::rmr: return "rmr";
    case PredictMode::baseline: return "baseline";
  }
  return "?";
}

inline WeightRule parse_weight_rule(const std::string& s) {
  if (s == "min") return WeightRule::min_pair;
  if (s == "geomean") return WeightRule::geomean;
  throw ConfigError("unknown weight rule: " + s);
}

inline const char* weight_rule_name(WeightRule r) {
  return r == WeightRule::min_pair ? "min" : "geomean";
}

// Where path confidences come from: the hierarchical sketch query, or the
// plain min-query tables for the rhp variant.
class ConfidenceSource {
 public:
  ConfidenceSource(const ConfidenceSketch& sketch, bool plain)
      : sketch_(&sketch), plain_(plain) {
    if (plain_ && sketch.peeling())
      throw ConfigError("plain confidence source requires a sketch built "
                        "without peeling");
  }

  double query(const ComboKey& key) const {
    if (plain_) return static_cast<double>(sketch_->plain_estimate(key));
    return sketch_->confidence(key);
  }

  std::uint32_t max_order() const { return sketch_->max_order(); }

 private:
  const ConfidenceSketch* sketch_;
  bool plain_;
};

// Confidence of adding feature f to the current path: the singleton's
// confidence for an empty path, otherwise the minimum pairwise confidence
// against the path members (a candidate is only as trustworthy as its
// weakest tracked interaction). Sketches tracking only singletons fall back
// to the singleton confidence throughout.
inline double pair_confidence(const ConfidenceSource& src, FeatureValue f,
                              std::span<const FeatureValue> path) {
  if (path.empty() || src.max_order() < 2)
    return src.query(ComboKey{{f}});
  double h = std::numeric_limits<double>::infinity();
  for (const FeatureValue& p : path) {
    ComboKey key = canonical_combo({f, p});
    h = std::min(h, src.query(key));
  }
  return h;
}

inline double pair_confidence(const ConfidenceSketch& sketch, FeatureValue f,
                              std::span<const FeatureValue> path) {
  return pair_confidence(ConfidenceSource(sketch, false), f, path);
}

// Normalized sampling probabilities for the candidates, in candidate order.
// All-zero confidences fall back to uniform. The last element takes the
// residual so the probabilities sum to 1.0 exactly.
inline std::vector<double> step_probabilities(
    const ConfidenceSource& src, std::span<const FeatureValue> path,
    std::span<const FeatureValue> candidates) {
  std::vector<double> h(candidates.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    h[i] = pair_confidence(src, candidates[i], path);
    sum += h[i];
  }
  std::vector<double> p(candidates.size());
  if (p.empty()) return p;
  double partial = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    p[i] = sum > 0.0 ? h[i] / sum : 1.0 / static_cast<double>(p.size());
    partial += p[i];
  }
  p.back() = 1.0 - partial;
  return p;
}

inline std::vector<double> step_probabilities(
    const ConfidenceSketch& sketch, std::span<const FeatureValue> path,
    std::span<const FeatureValue> candidates) {
  return step_probabilities(ConfidenceSource(sketch, false), path, candidates);
}

// One Bernoulli round: every candidate is tried independently in order,
// successes move to the path. One draw per candidate, selected or not, so
// the rng stream stays aligned however the draws land.
inline void extend_path(std::vector<FeatureValue>& path,
                        std::vector<FeatureValue>& candidates,
                        std::span<const double> probabilities, Rng& rng) {
  if (probabilities.size() != candidates.size())
    throw InvalidInputError("extend_path: probability/candidate mismatch");
  std::vector<FeatureValue> rest;
  rest.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (rng.next_double() < probabilities[i])
      path.push_back(candidates[i]);
    else
      rest.push_back(candidates[i]);
  }
  candidates.swap(rest);
}

// Weight of a finished path: the weakest link over all its pairwise
// confidences (or their geometric mean under the alternate rule). Falls
// back to singleton confidences when pairs are not tracked.
inline double path_weight(const ConfidenceSource& src,
                          std::span<const FeatureValue> set, WeightRule rule) {
  if (set.empty()) return 0.0;
  std::vector<double> parts;
  if (set.size() == 1 || src.max_order() < 2) {
    for (const FeatureValue& f : set) parts.push_back(src.query(ComboKey{{f}}));
  } else {
    for (std::size_t i = 0; i < set.size(); ++i)
      for (std::size_t j = i + 1; j < set.size(); ++j)
        parts.push_back(src.query(canonical_combo({set[i], set[j]})));
  }
  if (rule == WeightRule::min_pair) {
    double w = std::numeric_limits<double>::infinity();
    for (double v : parts) w = std::min(w, v);
    return w;
  }
  double log_sum = 0.0;
  for (double v : parts) {
    if (v <= 0.0) return 0.0;
    log_sum += std::log(v);
  }
  return std::exp(log_sum / static_cast<double>(parts.size()));
}

inline double path_weight(const ConfidenceSketch& sketch,
                          std::span<const FeatureValue> set,
                          WeightRule rule = WeightRule::min_pair) {
  return path_weight(ConfidenceSource(sketch, false), set, rule);
}

// Masks every field not named in `keep`. The kept features must belong to
// the instance.
inline Instance mask_instance(const Instance& inst,
                              std::span<const FeatureValue> keep) {
  Instance out;
  out.values.assign(inst.values.size(), kMaskValue);
  out.label = inst.label;
  for (const FeatureValue& fv : keep) {
    if (fv.field >= inst.n_fields() || inst.values[fv.field] != fv.value)
      throw InvalidInputError("mask_instance: feature not present in instance");
    out.values[fv.field] = fv.value;
  }
  return out;
}

// Confidence-weighted mean of the path scores; uniform mean when every
// weight is zero. Fixed-order reduction, result clamped to the score range
// so aggregation can never leave the ensemble's envelope.
inline double aggregate(std::span<const double> scores,
                        std::span<const double> weights) {
  if (scores.size() != weights.size())
    throw InvalidInputError("aggregate: score/weight length mismatch");
  if (scores.empty()) throw InvalidInputError("aggregate: empty ensemble");
  if (scores.size() == 1) return scores[0];

  double weight_sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw InvalidInputError("aggregate: negative weight");
    weight_sum += w;
  }
  double acc = 0.0;
  if (weight_sum > 0.0) {
    for (std::size_t i = 0; i < scores.size(); ++i)
      acc += (weights[i] / weight_sum) * scores[i];
  } else {
    for (double s : scores) acc += s;
    acc /= static_cast<double>(scores.size());
  }
  double lo = scores[0], hi = scores[0];
  for (double s : scores) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return std::clamp(acc, lo, hi);
}

struct MattParams {
  std::uint32_t steps = 10;  // T rounds per path
  std::uint32_t paths = 8;   // K paths per instance
  std::uint64_t seed = 42;
  std::uint64_t instance_id = 0;
  PredictMode mode = PredictMode::full;
  WeightRule weight_rule = WeightRule::min_pair;
};

struct PathEnsemble {
  std::vector<std::vector<FeatureValue>> paths;
  std::vector<double> weights;  // normalized to sum 1
  std::vector<double> scores;
  double prediction = 0.0;
};

namespace detail {

// Per-instance sampling engine with memoized confidence queries. One
// instance touches at most n singles and n^2/2 pairs however many paths run,
// so the cache turns repeated sketch lookups into array reads. Produces
// draw-for-draw the same paths as the standalone step functions.
class PathSampler {
 public:
  PathSampler(const ConfidenceSource& src, std::vector<FeatureValue> active)
      : src_(src),
        feats_(std::move(active)),
        n_(feats_.size()),
        singles_(n_, kUnset),
        pairs_(n_ * n_, kUnset) {}

  std::span<const FeatureValue> features() const { return feats_; }

  // T rounds of probability + Bernoulli extension; returns selected indices
  // in ascending field order.
  std::vector<std::size_t> run(std::uint32_t steps, Rng& rng, bool uniform) {
    std::vector<std::size_t> path;
    std::vector<std::size_t> cand(n_);
    for (std::size_t i = 0; i < n_; ++i) cand[i] = i;
    // Running min pairwise confidence vs the path; infinity = empty path.
    std::vector<double> h(n_, std::numeric_limits<double>::infinity());
    std::vector<double> probs;
    std::vector<std::size_t> picked, rest;

    const bool pairs_tracked = src_.max_order() >= 2;
    for (std::uint32_t t = 0; t < steps && !cand.empty(); ++t) {
      probs.resize(cand.size());
      if (uniform) {
        double partial = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
          probs[i] = 1.0 / static_cast<double>(probs.size());
          partial += probs[i];
        }
        probs.back() = 1.0 - partial;
      } else {
        double sum = 0.0;
        for (std::size_t i = 0; i < cand.size(); ++i) {
          double hi = std::isinf(h[cand[i]]) ? single(cand[i]) : h[cand[i]];
          probs[i] = hi;
          sum += hi;
        }
        double partial = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
          probs[i] = sum > 0.0 ? probs[i] / sum
                               : 1.0 / static_cast<double>(probs.size());
          partial += probs[i];
        }
        probs.back() = 1.0 - partial;
      }

      picked.clear();
      rest.clear();
      for (std::size_t i = 0; i < cand.size(); ++i) {
        if (rng.next_double() < probs[i])
          picked.push_back(cand[i]);
        else
          rest.push_back(cand[i]);
      }
      cand.swap(rest);
      for (std::size_t sel : picked) {
        path.push_back(sel);
        if (pairs_tracked)
          for (std::size_t c : cand) h[c] = std::min(h[c], pair(c, sel));
      }
    }
    std::sort(path.begin(), path.end());
    return path;
  }

  double set_weight(std::span<const std::size_t> chosen, WeightRule rule) {
    if (chosen.empty()) return 0.0;
    std::vector<double> parts;
    if (chosen.size() == 1 || src_.max_order() < 2) {
      for (std::size_t i : chosen) parts.push_back(single(i));
    } else {
      for (std::size_t a = 0; a < chosen.size(); ++a)
        for (std::size_t b = a + 1; b < chosen.size(); ++b)
          parts.push_back(pair(chosen[a], chosen[b]));
    }
    if (rule == WeightRule::min_pair) {
      double w = std::numeric_limits<double>::infinity();
      for (double v : parts) w = std::min(w, v);
      return w;
    }
    double log_sum = 0.0;
    for (double v : parts) {
      if (v <= 0.0) return 0.0;
      log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(parts.size()));
  }

  std::vector<FeatureValue> to_features(
      std::span<const std::size_t> indices) const {
    std::vector<FeatureValue> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(feats_[i]);
    return out;
  }

 private:
  static constexpr double kUnset = -1.0;

  double single(std::size_t i) {
    if (singles_[i] == kUnset) singles_[i] = src_.query(ComboKey{{feats_[i]}});
    return singles_[i];
  }

  double pair(std::size_t i, std::size_t j) {
    double& slot = pairs_[std::min(i, j) * n_ + std::max(i, j)];
    if (slot == kUnset)
      slot = src_.query(canonical_combo({feats_[i], feats_[j]}));
    return slot;
  }

  const ConfidenceSource& src_;
  std::vector<FeatureValue> feats_;
  std::size_t n_;
  std::vector<double> singles_;
  std::vector<double> pairs_;
};

}  // namespace detail

// Final feature set after T rounds against the hierarchical sketch.
inline std::vector<FeatureValue> generate_path(const Instance& inst,
                                               const ConfidenceSketch& sketch,
                                               std::uint32_t steps, Rng& rng) {
  if (steps < 1) throw ConfigError("generate_path: steps < 1");
  ConfidenceSource src(sketch, false);
  detail::PathSampler sampler(src, inst.active_features());
  return sampler.to_features(sampler.run(steps, rng, false));
}

// Full test-time ensemble for one instance; matt_predict is the scalar
// wrapper. Baseline mode degenerates to one pseudo-path holding every
// feature with weight 1.
inline PathEnsemble matt_predict_ensemble(const Instance& inst,
                                          const ConfidenceSketch* sketch,
                                          const Scorer& scorer,
                                          const MattParams& params) {
  PathEnsemble out;
  if (params.mode == PredictMode::baseline) {
    out.paths.push_back(inst.active_features());
    out.weights.push_back(1.0);
    out.scores.push_back(scorer.score(inst));
    out.prediction = out.scores[0];
    return out;
  }
  if (sketch == nullptr)
    throw ConfigError("matt_predict: mode requires a sketch");
  if (params.steps < 1) throw ConfigError("matt_predict: steps < 1");
  if (params.paths < 1) throw ConfigError("matt_predict: paths < 1");

  ConfidenceSource src(*sketch, params.mode == PredictMode::rhp);
  detail::PathSampler sampler(src, inst.active_features());
  const std::uint32_t k =
      params.mode == PredictMode::rmr ? 1 : params.paths;
  const bool uniform = params.mode == PredictMode::rcr;

  std::vector<double> raw_weights;
  for (std::uint32_t p = 0; p < k; ++p) {
    Rng rng(derive_seed(params.seed, kStreamPath, params.instance_id, p));
    std::vector<std::size_t> chosen = sampler.run(params.steps, rng, uniform);
    if (chosen.empty()) {
      // Every Bernoulli failed: score the unmasked input but give it no say
      // unless the whole ensemble came up empty.
      out.paths.emplace_back();
      out.scores.push_back(scorer.score(inst));
      raw_weights.push_back(0.0);
      continue;
    }
    std::vector<FeatureValue> feats = sampler.to_features(chosen);
    out.scores.push_back(scorer.score(mask_instance(inst, feats)));
    raw_weights.push_back(sampler.set_weight(chosen, params.weight_rule));
    out.paths.push_back(std::move(feats));
  }

  out.prediction = aggregate(out.scores, raw_weights);
  double wsum = 0.0;
  for (double w : raw_weights) wsum += w;
  out.weights.resize(raw_weights.size());
  for (std::size_t i = 0; i < raw_weights.size(); ++i)
    out.weights[i] = wsum > 0.0
                         ? raw_weights[i] / wsum
                         : 1.0 / static_cast<double>(raw_weights.size());
  return out;
}

inline double matt_predict(const Instance& inst, const ConfidenceSketch* sketch,
                           const Scorer& scorer, const MattParams& params) {
  if (params.mode == PredictMode::baseline) return scorer.score(inst);
  return matt_predict_ensemble(inst, sketch, scorer, params).prediction;
}

}  // namespace matt
