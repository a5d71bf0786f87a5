#include "matt/pathgen.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <map>
#include <vector>

#include "matt/core.hpp"
#include "matt/rng.hpp"
#include "matt/scorer.hpp"
#include "matt/sketch.hpp"
#include "oracles.hpp"

using matt::ComboKey;
using matt::ConfidenceSketch;
using matt::ConfidenceSource;
using matt::FeatureValue;
using matt::Instance;
using matt::MattParams;
using matt::PredictMode;
using matt::SketchConfig;
using matt::WeightRule;

namespace {

// Sketch whose confidences are exactly the given counts: capacity is large
// enough that every observed combo lands in the heap.
ConfidenceSketch exact_sketch(
    const std::vector<std::pair<std::vector<FeatureValue>, std::int64_t>>& counts,
    std::uint32_t max_order = 2) {
  SketchConfig cfg;
  cfg.max_order = max_order;
  cfg.widths = {1u << 12, 1u << 12};
  cfg.capacities.assign(max_order, 64);
  cfg.seed = 3;
  ConfidenceSketch s(cfg, cfg.capacities);
  for (const auto& [features, count] : counts)
    s.observe(matt::canonical_combo(features), count);
  return s;
}

// Scores depend on exactly which fields survive the mask.
struct FieldHashScorer : matt::Scorer {
  double score(const Instance& inst) const override {
    double z = 0.0;
    for (matt::FieldId f = 0; f < inst.n_fields(); ++f)
      if (inst.values[f] != matt::kMaskValue)
        z += 0.31 * static_cast<double>(inst.values[f]) -
             0.17 * static_cast<double>(f + 1);
    return matt::sigmoid(z - 0.4);
  }
};

}  // namespace

TEST_CASE("pair_confidence") {
  auto s = exact_sketch({
      {{{0, 1}}, 12},
      {{{0, 1}, {1, 1}}, 4},
      {{{0, 1}, {2, 1}}, 9},
  });

  SECTION("empty path uses the singleton") {
    CHECK(matt::pair_confidence(s, {0, 1}, {}) == 12.0);
  }

  SECTION("non-empty path takes the pairwise minimum") {
    std::vector<FeatureValue> path = {{1, 1}, {2, 1}};
    CHECK(matt::pair_confidence(s, {0, 1}, path) == 4.0);
  }

  SECTION("an unseen pair zeroes the whole confidence") {
    std::vector<FeatureValue> path = {{1, 1}, {3, 1}};  // (0,1)x(3,1) unseen
    CHECK(matt::pair_confidence(s, {0, 1}, path) == 0.0);
  }
}

TEST_CASE("pair_confidence on a singleton-only sketch") {
  auto s = exact_sketch({{{{0, 1}}, 7}}, 1);
  std::vector<FeatureValue> path = {{1, 1}};
  CHECK(matt::pair_confidence(s, {0, 1}, path) == 7.0);
}

TEST_CASE("step_probabilities") {
  // Singleton confidences 6, 3, 1 over three fields.
  auto s = exact_sketch({
      {{{0, 1}}, 6},
      {{{1, 1}}, 3},
      {{{2, 1}}, 1},
  });
  std::vector<FeatureValue> cands = {{0, 1}, {1, 1}, {2, 1}};

  SECTION("normalization") {
    auto p = matt::step_probabilities(s, {}, cands);
    REQUIRE(p.size() == 3);
    CHECK(p[0] == Catch::Approx(0.6));
    CHECK(p[1] == Catch::Approx(0.3));
    CHECK(p[2] == Catch::Approx(0.1));
    CHECK(p[0] + p[1] + p[2] == 1.0);
  }

  SECTION("all-zero confidences fall back to uniform") {
    std::vector<FeatureValue> cold = {{0, 9}, {1, 9}, {2, 9}};
    auto p = matt::step_probabilities(s, {}, cold);
    REQUIRE(p.size() == 3);
    CHECK(p[0] == Catch::Approx(1.0 / 3.0));
    CHECK(p[1] == Catch::Approx(1.0 / 3.0));
    CHECK(p[2] == Catch::Approx(1.0 / 3.0));
    CHECK(p[0] + p[1] + p[2] == 1.0);
  }

  SECTION("single candidate is forced") {
    std::vector<FeatureValue> one = {{0, 1}};
    auto p = matt::step_probabilities(s, {}, one);
    REQUIRE(p.size() == 1);
    CHECK(p[0] == 1.0);
  }

  SECTION("sums are exactly one across random confidence patterns") {
    matt::Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      std::uint32_t n = 2 + rng.below(8);
      std::vector<std::pair<std::vector<FeatureValue>, std::int64_t>> counts;
      std::vector<FeatureValue> cands;
      for (std::uint32_t f = 0; f < n; ++f) {
        cands.push_back({f, 1});
        if (rng.bernoulli(0.8))
          counts.push_back({{{f, 1}}, 1 + static_cast<std::int64_t>(rng.below(1000))});
      }
      auto sk = exact_sketch(counts, 1);
      auto p = matt::step_probabilities(sk, {}, cands);
      double sum = 0.0;
      for (double v : p) sum += v;  // fixed index order
      REQUIRE(sum == 1.0);
    }
  }
}

TEST_CASE("extend_path") {
  SECTION("probability one always selects, zero never") {
    std::vector<FeatureValue> path, cands = {{0, 1}, {1, 1}};
    std::vector<double> p = {1.0, 0.0};
    matt::Rng rng(1);
    for (int i = 0; i < 100 && !cands.empty(); ++i) {
      matt::extend_path(path, cands, p, rng);
      REQUIRE(path.size() == 1);
      REQUIRE(cands.size() == 1);
      CHECK(path[0] == FeatureValue{0, 1});
      p = {0.0};
    }
  }

  SECTION("Monte-Carlo selection rates match probabilities") {
    const std::vector<double> p = {0.6, 0.3, 0.1};
    int hits[3] = {0, 0, 0};
    const int trials = 100000;
    matt::Rng rng(99);
    for (int t = 0; t < trials; ++t) {
      std::vector<FeatureValue> path, cands = {{0, 1}, {1, 1}, {2, 1}};
      matt::extend_path(path, cands, p, rng);
      for (const auto& fv : path) ++hits[fv.field];
    }
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(hits[i] / double(trials) - p[i]) < 0.01);
  }

  SECTION("mismatched lengths are rejected") {
    std::vector<FeatureValue> path, cands = {{0, 1}};
    std::vector<double> p = {0.5, 0.5};
    matt::Rng rng(1);
    CHECK_THROWS_AS(matt::extend_path(path, cands, p, rng),
                    matt::InvalidInputError);
  }
}

TEST_CASE("generate_path") {
  // Four mutually confident features.
  std::vector<std::pair<std::vector<FeatureValue>, std::int64_t>> counts;
  for (std::uint32_t f = 0; f < 4; ++f) counts.push_back({{{f, 1}}, 10});
  for (std::uint32_t a = 0; a < 4; ++a)
    for (std::uint32_t b = a + 1; b < 4; ++b)
      counts.push_back({{{a, 1}, {b, 1}}, 5});
  auto s = exact_sketch(counts);
  Instance inst{{1, 1, 1, 1}, 0};

  SECTION("positive confidences exhaust eventually") {
    matt::Rng rng(7);
    auto path = matt::generate_path(inst, s, 200, rng);
    REQUIRE(path.size() == 4);
    CHECK(path == inst.active_features());
  }

  SECTION("zero steps rejected") {
    matt::Rng rng(7);
    CHECK_THROWS_AS(matt::generate_path(inst, s, 0, rng), matt::ConfigError);
  }

  SECTION("matches the free-function composition draw for draw") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      matt::Rng rng_a(seed), rng_b(seed);
      auto fast = matt::generate_path(inst, s, 3, rng_a);

      std::vector<FeatureValue> path, cands = inst.active_features();
      for (int t = 0; t < 3 && !cands.empty(); ++t) {
        auto p = matt::step_probabilities(s, path, cands);
        matt::extend_path(path, cands, p, rng_b);
      }
      std::sort(path.begin(), path.end());
      REQUIRE(fast == path);
    }
  }

  SECTION("paths grow monotonically") {
    matt::Rng rng(13);
    std::vector<FeatureValue> path, cands = inst.active_features();
    std::size_t last = 0;
    for (int t = 0; t < 5 && !cands.empty(); ++t) {
      auto p = matt::step_probabilities(s, path, cands);
      matt::extend_path(path, cands, p, rng);
      REQUIRE(path.size() >= last);
      last = path.size();
    }
  }
}

TEST_CASE("single positive candidate is selected at the first step") {
  auto s = exact_sketch({{{{0, 1}}, 3}});  // fields 1, 2 unseen
  Instance inst{{1, 1, 1}, 0};
  matt::Rng rng(21);
  // Step 1: probabilities {1, 0, 0}; the positive one is forced.
  std::vector<FeatureValue> path, cands = inst.active_features();
  auto p = matt::step_probabilities(s, path, cands);
  REQUIRE(p[0] == 1.0);
  REQUIRE(p[1] == 0.0);
  REQUIRE(p[2] == 0.0);
  matt::extend_path(path, cands, p, rng);
  REQUIRE(path.size() == 1);
  CHECK(path[0] == FeatureValue{0, 1});
}

TEST_CASE("path_weight") {
  // Pairwise confidences 5, 2, 9 among {a, b, c}.
  auto s = exact_sketch({
      {{{0, 1}}, 7},
      {{{0, 1}, {1, 1}}, 5},
      {{{0, 1}, {2, 1}}, 2},
      {{{1, 1}, {2, 1}}, 9},
  });

  std::vector<FeatureValue> abc = {{0, 1}, {1, 1}, {2, 1}};
  std::vector<FeatureValue> a = {{0, 1}};

  CHECK(matt::path_weight(s, {}) == 0.0);
  CHECK(matt::path_weight(s, a) == 7.0);
  CHECK(matt::path_weight(s, abc) == 2.0);
  CHECK(matt::path_weight(s, abc, WeightRule::geomean) ==
        Catch::Approx(std::cbrt(90.0)));

  // A set containing an unseen pair carries zero weight under both rules.
  std::vector<FeatureValue> with_cold = {{0, 1}, {1, 1}, {3, 1}};
  CHECK(matt::path_weight(s, with_cold) == 0.0);
  CHECK(matt::path_weight(s, with_cold, WeightRule::geomean) == 0.0);
}

TEST_CASE("mask_instance") {
  Instance inst{{3, 7, 2}, 1};

  SECTION("identity and empty") {
    CHECK(matt::mask_instance(inst, inst.active_features()) == inst);
    Instance all_masked = matt::mask_instance(inst, {});
    CHECK(all_masked.values == std::vector<std::uint32_t>{0, 0, 0});
    CHECK(all_masked.label == 1);
  }

  SECTION("partial keep") {
    std::vector<FeatureValue> keep = {{1, 7}};
    Instance m = matt::mask_instance(inst, keep);
    CHECK(m.values == std::vector<std::uint32_t>{0, 7, 0});
  }

  SECTION("foreign features rejected") {
    std::vector<FeatureValue> bogus = {{1, 99}};
    CHECK_THROWS_AS(matt::mask_instance(inst, bogus), matt::InvalidInputError);
  }
}

TEST_CASE("aggregate") {
  SECTION("worked example") {
    std::vector<double> s = {0.8, 0.4}, w = {3.0, 1.0};
    CHECK(matt::aggregate(s, w) == Catch::Approx(0.7));
  }

  SECTION("K=1 passthrough is exact") {
    std::vector<double> s = {0.3141592653589793}, w = {0.0};
    CHECK(matt::aggregate(s, w) == 0.3141592653589793);
  }

  SECTION("all-zero weights fall back to the uniform mean") {
    std::vector<double> s = {0.2, 0.6}, w = {0.0, 0.0};
    CHECK(matt::aggregate(s, w) == Catch::Approx(0.4));
  }

  SECTION("length mismatch rejected") {
    std::vector<double> s = {0.2, 0.6}, w = {1.0};
    CHECK_THROWS_AS(matt::aggregate(s, w), matt::InvalidInputError);
  }

  SECTION("equal scores collapse exactly") {
    std::vector<double> s = {0.1, 0.1, 0.1}, w = {1.0, 1.0, 1.0};
    CHECK(matt::aggregate(s, w) == 0.1);
  }

  SECTION("power-of-two weight scaling is bit-exact, output stays in range") {
    matt::Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
      std::size_t k = 1 + rng.below(8);
      std::vector<double> s(k), w(k);
      for (std::size_t i = 0; i < k; ++i) {
        s[i] = rng.next_double();
        w[i] = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.0, 10.0);
      }
      double base = matt::aggregate(s, w);
      double lo = *std::min_element(s.begin(), s.end());
      double hi = *std::max_element(s.begin(), s.end());
      REQUIRE(base >= lo);
      REQUIRE(base <= hi);
      for (double c : {0.25, 2.0, 1024.0}) {
        std::vector<double> scaled = w;
        for (double& x : scaled) x *= c;
        REQUIRE(matt::aggregate(s, scaled) == base);
      }
    }
  }
}

TEST_CASE("path distribution matches exhaustive enumeration") {
  // Four features with deliberately lopsided confidences.
  auto s = exact_sketch({
      {{{0, 1}}, 8},
      {{{1, 1}}, 4},
      {{{2, 1}}, 2},
      {{{3, 1}}, 1},
      {{{0, 1}, {1, 1}}, 6},
      {{{0, 1}, {2, 1}}, 3},
      {{{0, 1}, {3, 1}}, 1},
      {{{1, 1}, {2, 1}}, 5},
      {{{1, 1}, {3, 1}}, 2},
      {{{2, 1}, {3, 1}}, 4},
  });
  Instance inst{{1, 1, 1, 1}, 0};
  const std::uint32_t steps = 2;

  std::map<std::vector<FeatureValue>, double> expected;
  oracle::enumerate_path_distribution(
      {}, inst.active_features(), steps, 1.0,
      [&s](const std::vector<FeatureValue>& path,
           const std::vector<FeatureValue>& cand) {
        return matt::step_probabilities(s, path, cand);
      },
      expected);

  double mass = 0.0;
  for (const auto& [set, p] : expected) mass += p;
  REQUIRE(mass == Catch::Approx(1.0).epsilon(1e-9));

  const int trials = 20000;
  std::map<std::vector<FeatureValue>, double> empirical;
  for (int t = 0; t < trials; ++t) {
    matt::Rng rng(matt::derive_seed(4242, matt::kStreamPath, t, 0));
    auto path = matt::generate_path(inst, s, steps, rng);
    empirical[path] += 1.0 / trials;
  }

  double tv = 0.0;
  for (const auto& [set, p] : expected) {
    auto it = empirical.find(set);
    tv += std::abs(p - (it == empirical.end() ? 0.0 : it->second));
  }
  for (const auto& [set, p] : empirical)
    if (!expected.count(set)) tv += p;
  tv *= 0.5;
  CHECK(tv < 0.03);
}

TEST_CASE("matt_predict") {
  // A sketch over three fields where everything is warm.
  std::vector<std::pair<std::vector<FeatureValue>, std::int64_t>> counts;
  for (std::uint32_t f = 0; f < 3; ++f) counts.push_back({{{f, 2}}, 20});
  for (std::uint32_t a = 0; a < 3; ++a)
    for (std::uint32_t b = a + 1; b < 3; ++b)
      counts.push_back({{{a, 2}, {b, 2}}, 10});
  auto s = exact_sketch(counts);
  FieldHashScorer scorer;
  Instance inst{{2, 2, 2}, 1};

  SECTION("baseline is a passthrough") {
    MattParams params;
    params.mode = PredictMode::baseline;
    CHECK(matt::matt_predict(inst, &s, scorer, params) == scorer.score(inst));
    CHECK(matt::matt_predict(inst, nullptr, scorer, params) ==
          scorer.score(inst));
  }

  SECTION("exhaustion collapses to the full-input score") {
    MattParams params;
    params.steps = 64;  // plenty to select all three warm features
    params.paths = 4;
    CHECK(matt::matt_predict(inst, &s, scorer, params) == scorer.score(inst));
  }

  SECTION("full with K=1 equals rmr on the same seed") {
    MattParams full;
    full.steps = 3;
    full.paths = 1;
    full.seed = 11;
    MattParams rmr = full;
    rmr.mode = PredictMode::rmr;
    rmr.paths = 8;  // rmr forces K=1 regardless
    CHECK(matt::matt_predict(inst, &s, scorer, full) ==
          matt::matt_predict(inst, &s, scorer, rmr));
  }

  SECTION("bit-identical across repeated calls") {
    MattParams params;
    params.steps = 4;
    params.paths = 8;
    params.seed = 5;
    params.instance_id = 17;
    double a = matt::matt_predict(inst, &s, scorer, params);
    double b = matt::matt_predict(inst, &s, scorer, params);
    CHECK(a == b);
  }

  SECTION("ensemble invariants") {
    MattParams params;
    params.steps = 3;
    params.paths = 6;
    auto e = matt::matt_predict_ensemble(inst, &s, scorer, params);
    REQUIRE(e.paths.size() == 6);
    REQUIRE(e.weights.size() == 6);
    REQUIRE(e.scores.size() == 6);
    double wsum = 0.0;
    for (double w : e.weights) {
      CHECK(w >= 0.0);
      wsum += w;
    }
    CHECK(std::abs(wsum - 1.0) < 1e-9);
    double lo = *std::min_element(e.scores.begin(), e.scores.end());
    double hi = *std::max_element(e.scores.begin(), e.scores.end());
    CHECK(e.prediction >= lo);
    CHECK(e.prediction <= hi);
  }

  SECTION("an all-masked instance degrades to the unmasked score") {
    Instance empty{{0, 0, 0}, 0};
    MattParams params;
    params.paths = 4;
    CHECK(matt::matt_predict(empty, &s, scorer, params) ==
          scorer.score(empty));
  }

  SECTION("invalid parameters rejected") {
    MattParams params;
    params.steps = 0;
    CHECK_THROWS_AS(matt::matt_predict(inst, &s, scorer, params),
                    matt::ConfigError);
    params = MattParams{};
    params.paths = 0;
    CHECK_THROWS_AS(matt::matt_predict(inst, &s, scorer, params),
                    matt::ConfigError);
    params = MattParams{};
    CHECK_THROWS_AS(matt::matt_predict(inst, nullptr, scorer, params),
                    matt::ConfigError);
  }
}

TEST_CASE("rhp mode runs on a plain sketch and rejects a peeled one") {
  SketchConfig plain_cfg;
  plain_cfg.max_order = 2;
  plain_cfg.widths = {1u << 10, 1u << 10};
  plain_cfg.capacities = {0, 0};
  plain_cfg.peeling = false;
  std::vector<Instance> data = {Instance{{1, 1, 1}, 1}, Instance{{1, 1, 2}, 0},
                                Instance{{2, 1, 1}, 1}};
  auto plain = ConfidenceSketch::build(data, plain_cfg);

  FieldHashScorer scorer;
  Instance inst{{1, 1, 1}, 1};
  MattParams params;
  params.mode = PredictMode::rhp;
  params.steps = 3;
  params.paths = 4;
  double a = matt::matt_predict(inst, &plain, scorer, params);
  double b = matt::matt_predict(inst, &plain, scorer, params);
  CHECK(a == b);

  auto peeled_cfg = plain_cfg;
  peeled_cfg.peeling = true;
  peeled_cfg.capacities = {4, 4};
  auto peeled = ConfidenceSketch::build(data, peeled_cfg);
  CHECK_THROWS_AS(matt::matt_predict(inst, &peeled, scorer, params),
                  matt::ConfigError);
}

TEST_CASE("rcr samples uniformly while full follows confidence") {
  // Field 0 is overwhelmingly confident; fields 1 and 2 are cold.
  auto s = exact_sketch({
      {{{0, 1}}, 1000},
      {{{1, 1}}, 1},
      {{{2, 1}}, 1},
  });
  Instance inst{{1, 1, 1}, 0};
  FieldHashScorer scorer;

  int full_hits = 0, rcr_hits = 0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    MattParams params;
    params.steps = 1;
    params.paths = 1;
    params.instance_id = t;
    auto full = matt::matt_predict_ensemble(inst, &s, scorer, params);
    for (const auto& fv : full.paths[0])
      if (fv.field == 0) ++full_hits;
    params.mode = PredictMode::rcr;
    auto rcr = matt::matt_predict_ensemble(inst, &s, scorer, params);
    for (const auto& fv : rcr.paths[0])
      if (fv.field == 0) ++rcr_hits;
  }
  // full: p(field 0) = 1000/1002; rcr: 1/3.
  CHECK(full_hits > trials * 0.95);
  CHECK(rcr_hits < trials * 0.40);
  CHECK(rcr_hits > trials * 0.26);
}

TEST_CASE("mean features added per step is about one") {
  auto s = exact_sketch({
      {{{0, 1}}, 9},
      {{{1, 1}}, 3},
      {{{2, 1}}, 2},
      {{{3, 1}}, 1},
      {{{0, 1}, {1, 1}}, 4},
      {{{0, 1}, {2, 1}}, 2},
      {{{0, 1}, {3, 1}}, 1},
      {{{1, 1}, {2, 1}}, 2},
      {{{1, 1}, {3, 1}}, 1},
      {{{2, 1}, {3, 1}}, 1},
  });
  Instance inst{{1, 1, 1, 1}, 0};

  std::uint64_t steps_run = 0, added = 0;
  matt::Rng driver(31);
  while (steps_run < 2000) {
    matt::Rng rng(driver.next_u64());
    std::vector<FeatureValue> path, cands = inst.active_features();
    for (int t = 0; t < 4 && !cands.empty(); ++t) {
      auto p = matt::step_probabilities(s, path, cands);
      double sum = 0.0;
      for (double v : p) sum += v;
      REQUIRE(sum == 1.0);
      std::size_t before = path.size();
      matt::extend_path(path, cands, p, rng);
      added += path.size() - before;
      ++steps_run;
    }
  }
  double mean = static_cast<double>(added) / static_cast<double>(steps_run);
  CHECK(mean > 0.9);
  CHECK(mean < 1.1);
}

TEST_CASE("mode parsing") {
  CHECK(matt::parse_mode("full") == PredictMode::full);
  CHECK(matt::parse_mode("baseline") == PredictMode::baseline);
  CHECK_THROWS_AS(matt::parse_mode("bogus"), matt::ConfigError);
  CHECK(matt::parse_weight_rule("min") == WeightRule::min_pair);
  CHECK(matt::parse_weight_rule("geomean") == WeightRule::geomean);
  CHECK_THROWS_AS(matt::parse_weight_rule("median"), matt::ConfigError);
  CHECK(std::string(matt::mode_name(PredictMode::rcr)) == "rcr");
  CHECK(std::string(matt::weight_rule_name(WeightRule::geomean)) == "geomean");
}
