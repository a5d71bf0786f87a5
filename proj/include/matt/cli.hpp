#pragma once

// Subcommand implementations behind the command-line binary. Everything
// here speaks RunConfig in and JSON-lines out so the commands are driveable
// from tests without a process boundary.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "matt/config.hpp"
#include "matt/core.hpp"
#include "matt/data.hpp"
#include "matt/metrics.hpp"
#include "matt/pathgen.hpp"
#include "matt/scorer.hpp"
#include "matt/sketch.hpp"

namespace matt {

// One JSON object per line, flushed per record so interrupted runs keep
// their completed cells. Empty path means stdout.
class RecordWriter {
 public:
  explicit RecordWriter(const std::string& path, bool append = false) {
    if (!path.empty()) {
      file_.open(path, append ? std::ios::app : std::ios::trunc);
      if (!file_) throw ConfigError("cannot open output file: " + path);
      path_ = path;
    }
  }

  void write(const nlohmann::json& record) {
    std::ostream& os = file_.is_open() ? static_cast<std::ostream&>(file_)
                                       : static_cast<std::ostream&>(std::cout);
    os << record.dump() << '\n';
    os.flush();
    if (file_.is_open() && !file_) throw ConfigError("write failed: " + path_);
  }

 private:
  std::ofstream file_;
  std::string path_;
};

namespace detail {

inline Schema fresh_schema(const RunConfig& config) {
  Schema schema;
  schema.label_column = config.label_column;
  apply_numeric_columns(schema, config.numeric_columns);
  return schema;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open for write: " + path);
  out << body;
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace detail

// Scores one test split under one parameter cell and reports the metric
// record {K, T, auc, logloss, mode, n, runtime_ms, seed}. Instances shard
// across workers in contiguous ranges; per-instance seeding and the fixed
// reduction order keep the result independent of the worker count.
inline nlohmann::json evaluate_cell(const FmModel& model,
                                    const ConfidenceSketch* sketch,
                                    std::span<const Instance> test,
                                    const MattParams& params,
                                    std::uint32_t workers = 1) {
  auto start = std::chrono::steady_clock::now();
  const std::size_t n = test.size();
  std::vector<double> scores(n);

  auto run_range = [&](std::size_t begin, std::size_t end) {
    MattParams p = params;
    for (std::size_t i = begin; i < end; ++i) {
      p.instance_id = i;
      scores[i] = matt_predict(test[i], sketch, model, p);
    }
  };
  if (workers <= 1 || n < 2) {
    run_range(0, n);
  } else {
    std::uint32_t w = std::min<std::uint32_t>(workers, static_cast<std::uint32_t>(n));
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (std::uint32_t t = 0; t < w; ++t) {
      std::size_t begin = n * t / w, end = n * (t + 1) / w;
      pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = test[i].label;
  double auc_value = auc(scores, labels);
  double logloss_value = logloss(scores, labels);
  auto runtime_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();

  return {{"mode", mode_name(params.mode)},
          {"T", params.steps},
          {"K", params.paths},
          {"seed", params.seed},
          {"auc", auc_value},
          {"logloss", logloss_value},
          {"n", n},
          {"runtime_ms", static_cast<std::uint64_t>(runtime_ms)}};
}

inline void cmd_synth(const RunConfig& config) {
  if (config.train_path.empty() || config.test_path.empty())
    throw ConfigError("synth needs --train and --test output paths");
  auto sc = config.synth_config();
  sc.validate();
  auto data = generate_synthetic(sc);
  auto names = synth_field_names(sc.n_fields);
  write_tsv(config.train_path, data.train, names, config.label_column);
  write_tsv(config.test_path, data.test, names, config.label_column);
  std::string truth_path = config.train_path + ".truth.json";
  detail::write_text_file(truth_path,
                          synth_ground_truth_json(sc, data).dump() + "\n");

  RecordWriter writer(config.out_path);
  writer.write({{"command", "synth"},
                {"train_path", config.train_path},
                {"test_path", config.test_path},
                {"truth_path", truth_path},
                {"n_train", data.train.size()},
                {"n_test", data.test.size()},
                {"bias", data.bias},
                {"train_base_rate", data.train_base_rate},
                {"test_base_rate", data.test_base_rate},
                {"rare_pairs", data.rare_pairs.size()},
                {"affected_train", data.affected_train},
                {"corrupted_train", data.corrupted_train},
                {"seed", sc.seed}});
}

inline void cmd_train(const RunConfig& config) {
  if (config.train_path.empty()) throw ConfigError("train needs --train");
  if (config.model_path.empty()) throw ConfigError("train needs --model");
  auto tc = config.train_config();
  tc.validate();

  Schema schema = detail::fresh_schema(config);
  LoadStats stats;
  auto rows = load_dataset(config.train_path, schema, Split::train, &stats);
  if (rows.empty()) throw ConfigError("training split is empty");

  auto model = train_fm(rows, tc, schema.vocab_sizes());
  model.save_file(config.model_path);
  schema.save_file(config.effective_vocab_path());

  nlohmann::json record{{"command", "train"},
                        {"model_path", config.model_path},
                        {"vocab_path", config.effective_vocab_path()},
                        {"rows", stats.rows},
                        {"skipped_rows", stats.skipped_rows},
                        {"fields", schema.fields.size()},
                        {"dim", tc.dim},
                        {"epochs", tc.epochs},
                        {"seed", tc.seed}};
  bool has_pos = false, has_neg = false;
  for (const auto& r : rows) (r.label ? has_pos : has_neg) = true;
  if (has_pos && has_neg) {
    std::vector<double> scores(rows.size());
    std::vector<std::uint8_t> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      scores[i] = model.score(rows[i]);
      labels[i] = rows[i].label;
    }
    record["train_auc"] = auc(scores, labels);
    record["train_logloss"] = logloss(scores, labels);
  }
  RecordWriter(config.out_path).write(record);
}

inline void cmd_build_sketch(const RunConfig& config) {
  if (config.train_path.empty()) throw ConfigError("build-sketch needs --train");
  if (config.sketch_path.empty())
    throw ConfigError("build-sketch needs --sketch");
  auto sc = config.sketch_config();
  sc.validate();

  Schema schema;
  LoadStats stats;
  std::vector<Instance> rows;
  if (!config.vocab_path.empty()) {
    // Reuse a trained model's vocabulary so combo ids line up exactly.
    schema = Schema::load_file(config.vocab_path);
    rows = load_dataset(config.train_path, schema, Split::eval, &stats);
  } else {
    schema = detail::fresh_schema(config);
    rows = load_dataset(config.train_path, schema, Split::train, &stats);
  }
  if (rows.empty()) throw ConfigError("training split is empty");

  std::vector<OrderStats> order_stats;
  auto sketch = ConfidenceSketch::build(rows, sc, &order_stats);
  sketch.save_file(config.sketch_path);

  RecordWriter writer(config.out_path);
  for (const auto& os : order_stats)
    writer.write({{"command", "build-sketch"},
                  {"sketch_path", config.sketch_path},
                  {"order", os.order},
                  {"distinct_combos", os.distinct_combos},
                  {"distinct_over_threshold", os.distinct_over_threshold},
                  {"heap_capacity", os.heap_capacity},
                  {"heap_fill", os.heap_fill},
                  {"table_load_factor", os.table_load_factor},
                  {"peeling", sc.peeling},
                  {"rows", stats.rows},
                  {"seed", sc.seed}});
}

namespace detail {

struct EvalBundle {
  FmModel model;
  Schema schema;
  std::vector<Instance> test;
  std::optional<ConfidenceSketch> sketch;
};

inline EvalBundle load_eval_bundle(const RunConfig& config, bool need_sketch) {
  if (config.model_path.empty()) throw ConfigError("missing --model");
  if (config.test_path.empty()) throw ConfigError("missing --test");
  if (need_sketch && config.sketch_path.empty())
    throw ConfigError("missing --sketch");

  EvalBundle b;
  b.model = FmModel::load_file(config.model_path);
  b.schema = Schema::load_file(config.effective_vocab_path());
  LoadStats stats;
  b.test = load_dataset(config.test_path, b.schema, Split::eval, &stats);
  if (b.test.empty()) throw ConfigError("test split is empty");
  if (need_sketch) b.sketch.emplace(ConfidenceSketch::load_file(config.sketch_path));
  return b;
}

using CellKey = std::tuple<std::string, std::uint32_t, std::uint32_t, std::uint64_t>;

inline CellKey cell_key(const nlohmann::json& r) {
  return {r.at("mode").get<std::string>(), r.at("T").get<std::uint32_t>(),
          r.at("K").get<std::uint32_t>(), r.at("seed").get<std::uint64_t>()};
}

// Reads completed cells from a partial output so reruns only fill gaps.
// Truncated trailing lines (a killed run) are dropped and the file is
// compacted to the valid prefix.
inline std::set<CellKey> load_done_cells(const std::string& path) {
  std::set<CellKey> done;
  if (path.empty() || !std::filesystem::exists(path)) return done;
  std::ifstream in(path);
  std::vector<std::string> valid;
  std::string line;
  bool dirty = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      done.insert(cell_key(j));
      valid.push_back(line);
    } catch (const nlohmann::json::exception&) {
      dirty = true;
    }
  }
  in.close();
  if (dirty) {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : valid) out << l << '\n';
  }
  return done;
}

}  // namespace detail

inline void cmd_eval(const RunConfig& config) {
  config.validate();
  auto params = config.matt_params();
  auto bundle = detail::load_eval_bundle(
      config, params.mode != PredictMode::baseline);
  auto record = evaluate_cell(bundle.model,
                              bundle.sketch ? &*bundle.sketch : nullptr,
                              bundle.test, params, config.workers);
  RecordWriter(config.out_path).write(record);
}

inline void cmd_sweep(const RunConfig& config) {
  config.validate();
  if (config.sweep_steps.empty() || config.sweep_paths.empty())
    throw ConfigError("sweep grid is empty");
  auto params = config.matt_params();
  auto bundle = detail::load_eval_bundle(
      config, params.mode != PredictMode::baseline);

  auto done = detail::load_done_cells(config.out_path);
  RecordWriter writer(config.out_path, /*append=*/true);
  for (auto steps : config.sweep_steps)
    for (auto paths : config.sweep_paths) {
      MattParams cell = params;
      cell.steps = steps;
      cell.paths = paths;
      detail::CellKey key{mode_name(cell.mode), steps, paths, cell.seed};
      if (done.count(key)) continue;
      writer.write(evaluate_cell(bundle.model,
                                 bundle.sketch ? &*bundle.sketch : nullptr,
                                 bundle.test, cell, config.workers));
    }
}

inline void cmd_ablate(const RunConfig& config) {
  config.validate();
  auto bundle = detail::load_eval_bundle(config, /*need_sketch=*/true);

  // rhp reads raw table estimates, which only a non-peeled sketch provides.
  const ConfidenceSketch* plain = nullptr;
  std::optional<ConfidenceSketch> plain_storage;
  if (!config.plain_sketch_path.empty()) {
    plain_storage.emplace(ConfidenceSketch::load_file(config.plain_sketch_path));
    plain = &*plain_storage;
  } else if (!bundle.sketch->peeling()) {
    plain = &*bundle.sketch;
  }
  if (plain == nullptr || plain->peeling())
    throw ConfigError(
        "ablation includes mode rhp, which needs a non-peeled sketch; pass "
        "--plain-sketch with a snapshot built with --no-peeling");

  RecordWriter writer(config.out_path);
  for (auto mode : {PredictMode::full, PredictMode::rhp, PredictMode::rcr,
                    PredictMode::rmr, PredictMode::baseline}) {
    MattParams cell = config.matt_params();
    cell.mode = mode;
    const ConfidenceSketch* sk = nullptr;
    if (mode == PredictMode::rhp)
      sk = plain;
    else if (mode != PredictMode::baseline)
      sk = &*bundle.sketch;
    writer.write(
        evaluate_cell(bundle.model, sk, bundle.test, cell, config.workers));
  }
}

}  // namespace matt
