#pragma once

// Run configuration shared by every CLI subcommand. Values layer as
// defaults < config file < command-line flags; the file is flat JSON whose
// keys mirror the field names below.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "matt/core.hpp"
#include "matt/data.hpp"
#include "matt/pathgen.hpp"
#include "matt/scorer.hpp"
#include "matt/sketch.hpp"

namespace matt {

struct RunConfig {
  // Artifact paths.
  std::string train_path;
  std::string test_path;
  std::string sketch_path;
  std::string plain_sketch_path;  // non-peeled snapshot, needed by rhp
  std::string model_path;
  std::string vocab_path;  // defaults to model_path + ".vocab.json"
  std::string out_path;    // JSON-lines destination; empty = stdout

  // Ingestion.
  std::string label_column = "label";
  std::vector<std::string> numeric_columns;  // "name" or "name:max_bucket"

  // Sketch.
  std::uint32_t max_order = 2;
  std::uint32_t tables = 4;
  std::vector<std::uint64_t> widths = {1u << 18, 1u << 20};
  std::vector<std::uint32_t> capacities;  // empty or 0 entries = derived
  double alpha = 0.05;
  bool peeling = true;

  // Trainer.
  double learning_rate = 0.01;
  double l2 = 1e-6;
  std::uint32_t epochs = 10;
  std::uint32_t batch_size = 4096;
  std::uint32_t dim = 8;
  double init_scale = 0.1;

  // Inference.
  std::uint32_t steps = 10;  // masking rounds per path
  std::uint32_t paths = 8;   // ensemble size
  std::string mode = "full";
  std::string weight_rule = "min";
  std::uint64_t seed = 42;
  std::uint32_t workers = 1;

  // Sweep grids.
  std::vector<std::uint32_t> sweep_steps = {1, 5, 10, 15, 30};
  std::vector<std::uint32_t> sweep_paths = {2, 4, 8, 16, 25};

  // Synthetic data.
  std::uint32_t synth_fields = 20;
  std::uint32_t synth_cardinality = 40;
  double synth_zipf_s = 1.2;
  std::uint64_t synth_train_rows = 100000;
  std::uint64_t synth_test_rows = 20000;
  double synth_base_rate = 0.3;
  double synth_weight_scale = 0.5;
  double synth_corruption = 0.0;
  std::int64_t synth_rare_threshold = 10;

  bool operator==(const RunConfig&) const = default;

  SketchConfig sketch_config() const {
    SketchConfig c;
    c.max_order = max_order;
    c.tables = tables;
    c.widths = widths;
    c.capacities = capacities;
    c.alpha = alpha;
    c.peeling = peeling;
    c.seed = seed;
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.learning_rate = learning_rate;
    c.l2 = l2;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.seed = seed;
    c.dim = dim;
    c.init_scale = init_scale;
    return c;
  }

  SynthConfig synth_config() const {
    SynthConfig c;
    c.n_fields = synth_fields;
    c.cardinality = synth_cardinality;
    c.zipf_s = synth_zipf_s;
    c.n_train = synth_train_rows;
    c.n_test = synth_test_rows;
    c.target_base_rate = synth_base_rate;
    c.weight_scale = synth_weight_scale;
    c.corruption_rate = synth_corruption;
    c.rare_threshold = synth_rare_threshold;
    c.seed = seed;
    return c;
  }

  MattParams matt_params() const {
    MattParams p;
    p.steps = steps;
    p.paths = paths;
    p.seed = seed;
    p.mode = parse_mode(mode);
    p.weight_rule = parse_weight_rule(weight_rule);
    return p;
  }

  std::string effective_vocab_path() const {
    if (!vocab_path.empty()) return vocab_path;
    if (model_path.empty()) throw ConfigError("no model path to derive vocab path from");
    return model_path + ".vocab.json";
  }

  // Cheap cross-command sanity; per-command requirements live with the
  // commands themselves.
  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
    if (max_order < 1) throw ConfigError("max_order must be >= 1");
    if (tables < 1) throw ConfigError("tables must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (paths < 1) throw ConfigError("paths must be >= 1");
    parse_mode(mode);
    parse_weight_rule(weight_rule);
    train_config().validate();
  }
};

namespace detail {

template <class T>
T json_value(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

// Applies one flat JSON object on top of an existing config. Unknown keys
// are errors so typos never silently fall back to defaults.
inline void apply_config_json(RunConfig& config, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  using detail::json_value;
  for (const auto& [key, value] : j.items()) {
    if (key == "train_path") config.train_path = json_value<std::string>(value, key);
    else if (key == "test_path") config.test_path = json_value<std::string>(value, key);
    else if (key == "sketch_path") config.sketch_path = json_value<std::string>(value, key);
    else if (key == "plain_sketch_path") config.plain_sketch_path = json_value<std::string>(value, key);
    else if (key == "model_path") config.model_path = json_value<std::string>(value, key);
    else if (key == "vocab_path") config.vocab_path = json_value<std::string>(value, key);
    else if (key == "out_path") config.out_path = json_value<std::string>(value, key);
    else if (key == "label_column") config.label_column = json_value<std::string>(value, key);
    else if (key == "numeric_columns") config.numeric_columns = json_value<std::vector<std::string>>(value, key);
    else if (key == "max_order") config.max_order = json_value<std::uint32_t>(value, key);
    else if (key == "tables") config.tables = json_value<std::uint32_t>(value, key);
    else if (key == "widths") config.widths = json_value<std::vector<std::uint64_t>>(value, key);
    else if (key == "capacities") config.capacities = json_value<std::vector<std::uint32_t>>(value, key);
    else if (key == "alpha") config.alpha = json_value<double>(value, key);
    else if (key == "peeling") config.peeling = json_value<bool>(value, key);
    else if (key == "learning_rate") config.learning_rate = json_value<double>(value, key);
    else if (key == "l2") config.l2 = json_value<double>(value, key);
    else if (key == "epochs") config.epochs = json_value<std::uint32_t>(value, key);
    else if (key == "batch_size") config.batch_size = json_value<std::uint32_t>(value, key);
    else if (key == "dim") config.dim = json_value<std::uint32_t>(value, key);
    else if (key == "init_scale") config.init_scale = json_value<double>(value, key);
    else if (key == "steps") config.steps = json_value<std::uint32_t>(value, key);
    else if (key == "paths") config.paths = json_value<std::uint32_t>(value, key);
    else if (key == "mode") config.mode = json_value<std::string>(value, key);
    else if (key == "weight_rule") config.weight_rule = json_value<std::string>(value, key);
    else if (key == "seed") config.seed = json_value<std::uint64_t>(value, key);
    else if (key == "workers") config.workers = json_value<std::uint32_t>(value, key);
    else if (key == "sweep_steps") config.sweep_steps = json_value<std::vector<std::uint32_t>>(value, key);
    else if (key == "sweep_paths") config.sweep_paths = json_value<std::vector<std::uint32_t>>(value, key);
    else if (key == "synth_fields") config.synth_fields = json_value<std::uint32_t>(value, key);
    else if (key == "synth_cardinality") config.synth_cardinality = json_value<std::uint32_t>(value, key);
    else if (key == "synth_zipf_s") config.synth_zipf_s = json_value<double>(value, key);
    else if (key == "synth_train_rows") config.synth_train_rows = json_value<std::uint64_t>(value, key);
    else if (key == "synth_test_rows") config.synth_test_rows = json_value<std::uint64_t>(value, key);
    else if (key == "synth_base_rate") config.synth_base_rate = json_value<double>(value, key);
    else if (key == "synth_weight_scale") config.synth_weight_scale = json_value<double>(value, key);
    else if (key == "synth_corruption") config.synth_corruption = json_value<double>(value, key);
    else if (key == "synth_rare_threshold") config.synth_rare_threshold = json_value<std::int64_t>(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

inline nlohmann::json run_config_json(const RunConfig& c) {
  return {{"train_path", c.train_path},
          {"test_path", c.test_path},
          {"sketch_path", c.sketch_path},
          {"plain_sketch_path", c.plain_sketch_path},
          {"model_path", c.model_path},
          {"vocab_path", c.vocab_path},
          {"out_path", c.out_path},
          {"label_column", c.label_column},
          {"numeric_columns", c.numeric_columns},
          {"max_order", c.max_order},
          {"tables", c.tables},
          {"widths", c.widths},
          {"capacities", c.capacities},
          {"alpha", c.alpha},
          {"peeling", c.peeling},
          {"learning_rate", c.learning_rate},
          {"l2", c.l2},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"dim", c.dim},
          {"init_scale", c.init_scale},
          {"steps", c.steps},
          {"paths", c.paths},
          {"mode", c.mode},
          {"weight_rule", c.weight_rule},
          {"seed", c.seed},
          {"workers", c.workers},
          {"sweep_steps", c.sweep_steps},
          {"sweep_paths", c.sweep_paths},
          {"synth_fields", c.synth_fields},
          {"synth_cardinality", c.synth_cardinality},
          {"synth_zipf_s", c.synth_zipf_s},
          {"synth_train_rows", c.synth_train_rows},
          {"synth_test_rows", c.synth_test_rows},
          {"synth_base_rate", c.synth_base_rate},
          {"synth_weight_scale", c.synth_weight_scale},
          {"synth_corruption", c.synth_corruption},
          {"synth_rare_threshold", c.synth_rare_threshold}};
}

inline nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
}

// The three-layer merge: `defaults` (usually a fresh RunConfig), then the
// optional file, then explicitly-passed flag overrides.
inline RunConfig load_run_config(const RunConfig& defaults,
                                 const std::string& config_file,
                                 const nlohmann::json& flag_overrides) {
  RunConfig config = defaults;
  if (!config_file.empty()) apply_config_json(config, parse_json_file(config_file));
  apply_config_json(config, flag_overrides);
  return config;
}

// Parses "name" or "name:max_bucket" hints into schema form.
inline void apply_numeric_columns(Schema& schema,
                                  const std::vector<std::string>& hints) {
  for (const auto& hint : hints) {
    auto pos = hint.find(':');
    std::string name = hint.substr(0, pos);
    std::uint32_t bucket = 40;
    if (pos != std::string::npos) {
      try {
        bucket = static_cast<std::uint32_t>(std::stoul(hint.substr(pos + 1)));
      } catch (const std::exception&) {
        throw ConfigError("bad numeric column hint: " + hint);
      }
    }
    if (name.empty()) throw ConfigError("bad numeric column hint: " + hint);
    schema.numeric_columns[name] = bucket;
  }
}

}  // namespace matt
