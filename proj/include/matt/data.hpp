#pragma once

// Dataset ingestion (tab-separated text with a header row), numeric
// bucketization, vocabulary management, and a synthetic generator that
// plants unreliable rare feature pairs in the training split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "matt/core.hpp"
#include "matt/rng.hpp"
#include "matt/scorer.hpp"

namespace matt {

enum class FieldKind : std::uint8_t { categorical = 0, numeric = 1 };
enum class Split { train, eval };

// Missing or non-positive values get the reserved low buckets; everything
// else lands on a log2 grid. id 0 doubles as the mask sentinel.
inline std::uint32_t bucketize_numeric(double x, std::uint32_t max_bucket) {
  if (x <= 0.0) return 1;
  auto id = 2 + static_cast<std::uint32_t>(std::floor(std::log2(1.0 + x)));
  return std::min(id, max_bucket);
}

struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  std::uint32_t max_bucket = 40;  // numeric fields only
  std::unordered_map<std::string, std::uint32_t> vocab;  // categorical only
  std::uint32_t next_id = 1;  // id 0 is reserved for missing/unknown

  std::uint32_t vocab_size() const {
    return kind == FieldKind::numeric ? max_bucket + 1 : next_id;
  }
};

struct Schema {
  std::string label_column = "label";
  // Consulted only when fields are inferred from a header: column name ->
  // max bucket for columns that should be treated as numeric.
  std::map<std::string, std::uint32_t> numeric_columns;
  std::vector<FieldSchema> fields;

  std::vector<std::uint32_t> vocab_sizes() const {
    std::vector<std::uint32_t> out;
    out.reserve(fields.size());
    for (const auto& f : fields) out.push_back(f.vocab_size());
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json jfields = nlohmann::json::array();
    for (const auto& f : fields) {
      nlohmann::json jf;
      jf["name"] = f.name;
      if (f.kind == FieldKind::numeric) {
        jf["kind"] = "numeric";
        jf["max_bucket"] = f.max_bucket;
      } else {
        jf["kind"] = "categorical";
        nlohmann::json jv = nlohmann::json::object();
        for (const auto& [tok, id] : f.vocab) jv[tok] = id;
        jf["vocab"] = jv;
      }
      jfields.push_back(jf);
    }
    return {{"label_column", label_column}, {"fields", jfields}};
  }

  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    s.label_column = j.at("label_column").get<std::string>();
    for (const auto& jf : j.at("fields")) {
      FieldSchema f;
      f.name = jf.at("name").get<std::string>();
      auto kind = jf.at("kind").get<std::string>();
      if (kind == "numeric") {
        f.kind = FieldKind::numeric;
        f.max_bucket = jf.at("max_bucket").get<std::uint32_t>();
      } else if (kind == "categorical") {
        f.kind = FieldKind::categorical;
        for (const auto& [tok, id] : jf.at("vocab").items()) {
          auto v = id.get<std::uint32_t>();
          if (v == kMaskValue)
            throw SchemaError("vocab id 0 is reserved: field " + f.name);
          f.vocab[tok] = v;
          f.next_id = std::max(f.next_id, v + 1);
        }
      } else {
        throw SchemaError("unknown field kind: " + kind);
      }
      s.fields.push_back(std::move(f));
    }
    return s;
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open for write: " + path);
    out << to_json().dump(2) << '\n';
    if (!out) throw ConfigError("write failed: " + path);
  }

  static Schema load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

struct LoadStats {
  std::uint64_t rows = 0;           // instances emitted
  std::uint64_t skipped_rows = 0;   // wrong column count
  std::uint64_t unknown_tokens = 0; // eval-split tokens absent from vocab
  std::uint64_t bad_numerics = 0;   // unparseable numeric tokens
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline void chomp_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// Streaming TSV parse. An empty schema is inferred from the header (every
// non-label column categorical unless schema.numeric_columns says otherwise);
// a populated schema must match the header layout. Train split grows the
// vocabularies, eval split maps unseen tokens to the mask id.
inline std::vector<Instance> load_dataset(const std::string& path,
                                          Schema& schema, Split split,
                                          LoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path);

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file: " + path);
  detail::chomp_cr(line);
  auto header = detail::split_tabs(line);

  std::size_t label_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == schema.label_column) {
      label_col = c;
      break;
    }
  if (label_col == header.size())
    throw SchemaError("label column '" + schema.label_column +
                      "' not in header of " + path);

  // Field index for each non-label column, in header order.
  std::vector<std::size_t> col_field(header.size(), SIZE_MAX);
  if (schema.fields.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == label_col) continue;
      FieldSchema f;
      f.name = header[c];
      if (auto it = schema.numeric_columns.find(f.name);
          it != schema.numeric_columns.end()) {
        f.kind = FieldKind::numeric;
        f.max_bucket = it->second;
        if (f.max_bucket < 2)
          throw SchemaError("max bucket must be >= 2: " + f.name);
      }
      col_field[c] = schema.fields.size();
      schema.fields.push_back(std::move(f));
    }
  } else {
    std::size_t fi = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == label_col) continue;
      if (fi >= schema.fields.size() || header[c] != schema.fields[fi].name)
        throw SchemaError("header does not match schema at column '" +
                          header[c] + "' in " + path);
      col_field[c] = fi++;
    }
    if (fi != schema.fields.size())
      throw SchemaError("header is missing schema fields in " + path);
  }

  LoadStats local;
  LoadStats& st = stats ? *stats : local;
  std::vector<Instance> out;
  std::uint64_t line_no = 1;

  while (std::getline(in, line)) {
    ++line_no;
    detail::chomp_cr(line);
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    auto cells = detail::split_tabs(line);
    if (cells.size() != header.size()) {
      ++st.skipped_rows;
      continue;
    }

    const std::string& label_tok = cells[label_col];
    std::uint8_t label;
    if (label_tok == "0")
      label = 0;
    else if (label_tok == "1")
      label = 1;
    else
      throw InvalidInputError("label not in {0,1} at " + path + ":" +
                              std::to_string(line_no));

    Instance inst;
    inst.label = label;
    inst.values.resize(schema.fields.size(), kMaskValue);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) continue;
      auto& field = schema.fields[col_field[c]];
      const std::string& tok = cells[c];
      std::uint32_t id = kMaskValue;
      if (!tok.empty()) {
        if (field.kind == FieldKind::numeric) {
          try {
            std::size_t used = 0;
            double x = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            id = bucketize_numeric(x, field.max_bucket);
          } catch (const std::exception&) {
            ++st.bad_numerics;
          }
        } else {
          auto it = field.vocab.find(tok);
          if (it != field.vocab.end()) {
            id = it->second;
          } else if (split == Split::train) {
            id = field.next_id++;
            field.vocab.emplace(tok, id);
          } else {
            ++st.unknown_tokens;
          }
        }
      }
      inst.values[col_field[c]] = id;
    }
    out.push_back(std::move(inst));
    ++st.rows;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  std::uint32_t n_fields = 20;
  std::uint32_t cardinality = 40;  // value ids 1..cardinality per field
  double zipf_s = 1.2;
  std::uint64_t n_train = 100000;
  std::uint64_t n_test = 20000;
  // When > 0 the intercept is solved so the mean train label probability
  // hits this rate; otherwise `bias` is used as-is.
  double target_base_rate = 0.3;
  double bias = 0.0;
  double weight_scale = 0.5;  // pairwise weights ~ U(-scale, scale)
  double corruption_rate = 0.0;
  std::int64_t rare_threshold = 10;  // joint train count below this is rare
  std::uint64_t seed = 42;

  void validate() const {
    if (n_fields < 2) throw ConfigError("n_fields must be >= 2");
    if (cardinality < 2) throw ConfigError("cardinality must be >= 2");
    if (zipf_s < 0.0) throw ConfigError("zipf_s must be >= 0");
    if (n_train < 1) throw ConfigError("n_train must be >= 1");
    if (corruption_rate < 0.0 || corruption_rate > 1.0)
      throw ConfigError("corruption_rate must be in [0,1]");
    if (target_base_rate > 0.0 && target_base_rate >= 1.0)
      throw ConfigError("target_base_rate must be < 1");
    if (rare_threshold < 0) throw ConfigError("rare_threshold must be >= 0");
  }

  std::uint64_t n_pairs() const {
    return std::uint64_t(n_fields) * (n_fields - 1) / 2;
  }
};

struct RarePair {
  std::uint32_t field_a, field_b;
  std::uint32_t value_a, value_b;
};

struct SynthResult {
  std::vector<Instance> train, test;
  std::vector<std::uint32_t> vocab_sizes;  // cardinality + 1 per field
  std::vector<double> pair_weights;  // [pair][a-1][b-1] flattened
  std::vector<RarePair> rare_pairs;  // corruption-eligible value pairs
  double bias = 0.0;
  std::uint64_t affected_train = 0;   // train rows containing a rare pair
  std::uint64_t corrupted_train = 0;  // rows whose label was flipped
  double train_base_rate = 0.0;
  double test_base_rate = 0.0;
};

namespace detail {

// Inverse-CDF Zipf sampler over ranks 1..n; rank r has mass r^-s. Rank 1 is
// the most frequent value, so value ids are frequency-ordered.
class ZipfTable {
 public:
  ZipfTable(std::uint32_t n, double s) : cdf_(n) {
    double total = 0.0;
    for (std::uint32_t r = 1; r <= n; ++r) {
      total += std::pow(static_cast<double>(r), -s);
      cdf_[r - 1] = total;
    }
    for (auto& c : cdf_) c /= total;
    cdf_.back() = 1.0;
  }

  std::uint32_t draw(Rng& rng) const {
    double u = rng.next_double();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<std::uint32_t>(it - cdf_.begin()) + 1;
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace detail

// Labels come from a dense pairwise ground truth; afterwards train rows that
// contain any rare value pair get their label flipped with the configured
// rate, so rare combinations point the wrong way at train time while the
// test split keeps the clean process.
inline SynthResult generate_synthetic(const SynthConfig& config) {
  config.validate();
  const std::uint32_t n = config.n_fields;
  const std::uint32_t card = config.cardinality;
  const std::uint64_t n_pairs = config.n_pairs();

  SynthResult result;
  result.vocab_sizes.assign(n, card + 1);

  // Stage 1: feature values, train rows first, then test, fields in order.
  {
    Rng rng(derive_seed(config.seed, kStreamSynthValues));
    detail::ZipfTable zipf(card, config.zipf_s);
    auto draw_rows = [&](std::uint64_t count, std::vector<Instance>& out) {
      out.resize(count);
      for (auto& inst : out) {
        inst.values.resize(n);
        for (std::uint32_t f = 0; f < n; ++f) inst.values[f] = zipf.draw(rng);
      }
    };
    draw_rows(config.n_train, result.train);
    draw_rows(config.n_test, result.test);
  }

  // Stage 2: ground-truth pairwise weights.
  result.pair_weights.resize(n_pairs * card * card);
  {
    Rng rng(derive_seed(config.seed, kStreamSynthWeights));
    for (auto& w : result.pair_weights)
      w = rng.uniform(-config.weight_scale, config.weight_scale);
  }

  auto pair_index = [n](std::uint32_t a, std::uint32_t b) {
    // Row-major upper triangle: (0,1), (0,2), ..., (1,2), ...
    return std::uint64_t(a) * (2 * n - a - 1) / 2 + (b - a - 1);
  };
  auto weight_at = [&](std::uint64_t p, std::uint32_t va, std::uint32_t vb) {
    return result.pair_weights[(p * card + (va - 1)) * card + (vb - 1)];
  };
  auto logit_of = [&](const Instance& inst) {
    double z = 0.0;
    for (std::uint32_t a = 0; a + 1 < n; ++a)
      for (std::uint32_t b = a + 1; b < n; ++b)
        z += weight_at(pair_index(a, b), inst.values[a], inst.values[b]);
    return z;
  };

  std::vector<double> train_logits(result.train.size());
  for (std::size_t i = 0; i < result.train.size(); ++i)
    train_logits[i] = logit_of(result.train[i]);

  // Stage 3: intercept. Mean predicted rate is monotone in the bias, so a
  // plain bisection pins the train base rate.
  if (config.target_base_rate > 0.0) {
    double lo = -30.0, hi = 30.0;
    for (int iter = 0; iter < 100; ++iter) {
      double mid = 0.5 * (lo + hi);
      double mean = 0.0;
      for (double z : train_logits) mean += sigmoid(mid + z);
      mean /= static_cast<double>(train_logits.size());
      (mean < config.target_base_rate ? lo : hi) = mid;
    }
    result.bias = 0.5 * (lo + hi);
  } else {
    result.bias = config.bias;
  }

  // Stage 4: labels, train rows first, then test.
  {
    Rng rng(derive_seed(config.seed, kStreamSynthLabels));
    for (std::size_t i = 0; i < result.train.size(); ++i)
      result.train[i].label =
          rng.bernoulli(sigmoid(result.bias + train_logits[i])) ? 1 : 0;
    for (auto& inst : result.test)
      inst.label = rng.bernoulli(sigmoid(result.bias + logit_of(inst))) ? 1 : 0;
  }

  // Stage 5: joint train counts per value pair, then corruption of train
  // rows that contain at least one rare pair.
  {
    std::vector<std::int64_t> counts(n_pairs * card * card, 0);
    auto cell = [&](std::uint32_t a, std::uint32_t b,
                    const Instance& inst) -> std::int64_t& {
      return counts[(pair_index(a, b) * card + (inst.values[a] - 1)) * card +
                    (inst.values[b] - 1)];
    };
    for (const auto& inst : result.train)
      for (std::uint32_t a = 0; a + 1 < n; ++a)
        for (std::uint32_t b = a + 1; b < n; ++b) ++cell(a, b, inst);

    std::vector<bool> rare(counts.size(), false);
    for (std::uint32_t a = 0; a + 1 < n; ++a)
      for (std::uint32_t b = a + 1; b < n; ++b) {
        std::uint64_t base = pair_index(a, b) * card * card;
        for (std::uint32_t va = 1; va <= card; ++va)
          for (std::uint32_t vb = 1; vb <= card; ++vb) {
            auto idx = base + std::uint64_t(va - 1) * card + (vb - 1);
            if (counts[idx] > 0 && counts[idx] < config.rare_threshold) {
              rare[idx] = true;
              result.rare_pairs.push_back({a, b, va, vb});
            }
          }
      }

    Rng rng(derive_seed(config.seed, kStreamSynthFlips));
    for (auto& inst : result.train) {
      bool affected = false;
      for (std::uint32_t a = 0; a + 1 < n && !affected; ++a)
        for (std::uint32_t b = a + 1; b < n; ++b) {
          auto idx = (pair_index(a, b) * card + (inst.values[a] - 1)) * card +
                     (inst.values[b] - 1);
          if (rare[idx]) {
            affected = true;
            break;
          }
        }
      if (!affected) continue;
      ++result.affected_train;
      if (rng.bernoulli(config.corruption_rate)) {
        inst.label ^= 1;
        ++result.corrupted_train;
      }
    }
  }

  auto base_rate = [](const std::vector<Instance>& rows) {
    if (rows.empty()) return 0.0;
    std::uint64_t pos = 0;
    for (const auto& r : rows) pos += r.label;
    return static_cast<double>(pos) / static_cast<double>(rows.size());
  };
  result.train_base_rate = base_rate(result.train);
  result.test_base_rate = base_rate(result.test);
  return result;
}

// Zero-padded field names f00, f01, ... shared by the writer and any
// schema built on top of generated files.
inline std::vector<std::string> synth_field_names(std::uint32_t n_fields) {
  int width = 2;
  for (std::uint32_t v = 100; n_fields > v; v *= 10) ++width;
  std::vector<std::string> names;
  names.reserve(n_fields);
  for (std::uint32_t f = 0; f < n_fields; ++f) {
    std::ostringstream os;
    os << 'f' << std::setw(width) << std::setfill('0') << f;
    names.push_back(os.str());
  }
  return names;
}

inline void write_tsv(const std::string& path,
                      const std::vector<Instance>& rows,
                      const std::vector<std::string>& field_names,
                      const std::string& label_column = "label") {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open for write: " + path);
  out << label_column;
  for (const auto& name : field_names) out << '\t' << name;
  out << '\n';
  for (const auto& inst : rows) {
    if (inst.values.size() != field_names.size())
      throw InvalidInputError("row width does not match field names");
    out << static_cast<int>(inst.label);
    for (auto v : inst.values) {
      out << '\t';
      if (v != kMaskValue) out << 'v' << v;
    }
    out << '\n';
  }
  if (!out) throw ConfigError("write failed: " + path);
}

// Ground-truth sidecar: config echo, the pairwise weight table, and the
// corruption-eligible pair list.
inline nlohmann::json synth_ground_truth_json(const SynthConfig& config,
                                              const SynthResult& result) {
  nlohmann::json j;
  j["config"] = {{"n_fields", config.n_fields},
                 {"cardinality", config.cardinality},
                 {"zipf_s", config.zipf_s},
                 {"n_train", config.n_train},
                 {"n_test", config.n_test},
                 {"target_base_rate", config.target_base_rate},
                 {"weight_scale", config.weight_scale},
                 {"corruption_rate", config.corruption_rate},
                 {"rare_threshold", config.rare_threshold},
                 {"seed", config.seed}};
  j["bias"] = result.bias;
  j["train_base_rate"] = result.train_base_rate;
  j["test_base_rate"] = result.test_base_rate;
  j["affected_train"] = result.affected_train;
  j["corrupted_train"] = result.corrupted_train;
  j["pair_weights"] = result.pair_weights;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : result.rare_pairs)
    pairs.push_back({p.field_a, p.field_b, p.value_a, p.value_b});
  j["rare_pairs"] = pairs;
  return j;
}

}  // namespace matt
