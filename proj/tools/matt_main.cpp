// Command-line entry point. Flags layer over an optional JSON config file,
// which layers over built-in defaults; only flags the user actually passed
// override the file.

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "matt/cli.hpp"
#include "matt/config.hpp"

namespace {

// Binds CLI11 options to RunConfig fields and remembers which were passed,
// so the config-file merge only sees explicit overrides.
struct FlagBinder {
  CLI::App* cmd;
  matt::RunConfig* slots;
  nlohmann::json overrides = nlohmann::json::object();
  std::vector<std::function<void()>> collectors;
  std::string config_file;

  FlagBinder(CLI::App* c, matt::RunConfig* s) : cmd(c), slots(s) {
    cmd->add_option("--config", config_file,
                    "JSON config file; flags override its values");
  }

  template <class T>
  CLI::Option* opt(const std::string& flag, const std::string& key, T& slot,
                   const std::string& desc) {
    auto* option = cmd->add_option(flag, slot, desc);
    if constexpr (!std::is_arithmetic_v<T> && !std::is_same_v<T, std::string>)
      option->delimiter(',');
    collectors.push_back([this, option, key, &slot] {
      if (option->count()) overrides[key] = slot;
    });
    return option;
  }

  CLI::Option* flag_off(const std::string& flag, const std::string& key,
                        bool& slot, const std::string& desc) {
    auto* option = cmd->add_flag_callback(
        flag, [&slot] { slot = false; }, desc);
    collectors.push_back([this, option, key, &slot] {
      if (option->count()) overrides[key] = slot;
    });
    return option;
  }

  matt::RunConfig merged() {
    for (auto& collect : collectors) collect();
    return matt::load_run_config(matt::RunConfig{}, config_file, overrides);
  }

  void common() {
    opt("--seed", "seed", slots->seed, "master seed for every derived stream");
    opt("--out", "out_path", slots->out_path,
        "JSON-lines output file (default stdout)");
  }

  void ingest() {
    opt("--label-column", "label_column", slots->label_column,
        "label column name");
    opt("--numeric", "numeric_columns", slots->numeric_columns,
        "numeric columns, name or name:max_bucket, comma separated");
  }

  void sketch_knobs() {
    opt("--max-order", "max_order", slots->max_order,
        "largest combination order tracked");
    opt("--tables", "tables", slots->tables, "hash tables per order");
    opt("--widths", "widths", slots->widths,
        "table widths per order, last repeats");
    opt("--capacities", "capacities", slots->capacities,
        "heavy-hitter heap capacities per order, 0 = derive");
    opt("--alpha", "alpha", slots->alpha,
        "tail mass for the confidence lower bound");
    flag_off("--no-peeling", "peeling", slots->peeling,
             "keep raw table counts instead of peeling heavy hitters");
  }

  void train_knobs() {
    opt("--lr", "learning_rate", slots->learning_rate, "Adam learning rate");
    opt("--l2", "l2", slots->l2, "L2 penalty (bias excluded)");
    opt("--epochs", "epochs", slots->epochs, "training epochs");
    opt("--batch-size", "batch_size", slots->batch_size, "minibatch size");
    opt("--dim", "dim", slots->dim, "embedding dimension");
    opt("--init-scale", "init_scale", slots->init_scale,
        "gaussian init scale");
  }

  void infer_knobs() {
    opt("--steps,-T", "steps", slots->steps, "masking rounds per path");
    opt("--paths,-K", "paths", slots->paths, "paths per instance");
    opt("--mode", "mode", slots->mode,
        "full | rhp | rcr | rmr | baseline");
    opt("--weight-rule", "weight_rule", slots->weight_rule,
        "path weight rule: min | geomean");
    opt("--workers", "workers", slots->workers, "evaluation worker threads");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Test-time inference toolkit for CTR models: frequency-sketch "
      "confidence, stochastic masking paths, and weighted ensembling over a "
      "factorization-machine scorer."};
  app.require_subcommand(1);

  matt::RunConfig slots[6];
  std::vector<FlagBinder> binders;
  binders.reserve(6);
  std::function<void(const matt::RunConfig&)> actions[6];

  auto add = [&](int idx, const char* name, const char* desc,
                 std::function<void(const matt::RunConfig&)> fn) -> FlagBinder& {
    auto* cmd = app.add_subcommand(name, desc);
    binders.emplace_back(cmd, &slots[idx]);
    actions[idx] = std::move(fn);
    return binders.back();
  };

  {
    auto& b = add(0, "synth", "generate a synthetic skewed dataset",
                  matt::cmd_synth);
    b.common();
    b.opt("--train", "train_path", b.slots->train_path, "train TSV to write");
    b.opt("--test", "test_path", b.slots->test_path, "test TSV to write");
    b.opt("--label-column", "label_column", b.slots->label_column,
          "label column name");
    b.opt("--fields", "synth_fields", b.slots->synth_fields, "field count");
    b.opt("--cardinality", "synth_cardinality", b.slots->synth_cardinality,
          "values per field");
    b.opt("--zipf-s", "synth_zipf_s", b.slots->synth_zipf_s,
          "zipf exponent for value draws");
    b.opt("--train-rows", "synth_train_rows", b.slots->synth_train_rows,
          "train rows");
    b.opt("--test-rows", "synth_test_rows", b.slots->synth_test_rows,
          "test rows");
    b.opt("--base-rate", "synth_base_rate", b.slots->synth_base_rate,
          "target positive rate (0 = use raw bias)");
    b.opt("--weight-scale", "synth_weight_scale", b.slots->synth_weight_scale,
          "pairwise ground-truth weight scale");
    b.opt("--corruption", "synth_corruption", b.slots->synth_corruption,
          "label flip rate for rows containing rare pairs");
    b.opt("--rare-threshold", "synth_rare_threshold",
          b.slots->synth_rare_threshold,
          "joint count below which a value pair is rare");
  }
  {
    auto& b = add(1, "train", "train the factorization-machine scorer",
                  matt::cmd_train);
    b.common();
    b.ingest();
    b.train_knobs();
    b.opt("--train", "train_path", b.slots->train_path, "train TSV to read");
    b.opt("--model", "model_path", b.slots->model_path, "model file to write");
    b.opt("--vocab", "vocab_path", b.slots->vocab_path,
          "vocabulary file to write (default <model>.vocab.json)");
  }
  {
    auto& b = add(2, "build-sketch", "count combinations into a sketch",
                  matt::cmd_build_sketch);
    b.common();
    b.ingest();
    b.sketch_knobs();
    b.opt("--train", "train_path", b.slots->train_path, "train TSV to read");
    b.opt("--sketch", "sketch_path", b.slots->sketch_path,
          "sketch file to write");
    b.opt("--vocab", "vocab_path", b.slots->vocab_path,
          "existing vocabulary to reuse for exact id alignment");
  }
  {
    auto& b = add(3, "eval", "score a test split and report metrics",
                  matt::cmd_eval);
    b.common();
    b.infer_knobs();
    b.opt("--test", "test_path", b.slots->test_path, "test TSV to read");
    b.opt("--model", "model_path", b.slots->model_path, "model file");
    b.opt("--vocab", "vocab_path", b.slots->vocab_path,
          "vocabulary file (default <model>.vocab.json)");
    b.opt("--sketch", "sketch_path", b.slots->sketch_path,
          "sketch file (unused in baseline mode)");
  }
  {
    auto& b = add(4, "sweep", "evaluate a grid of steps and path counts",
                  matt::cmd_sweep);
    b.common();
    b.infer_knobs();
    b.opt("--test", "test_path", b.slots->test_path, "test TSV to read");
    b.opt("--model", "model_path", b.slots->model_path, "model file");
    b.opt("--vocab", "vocab_path", b.slots->vocab_path, "vocabulary file");
    b.opt("--sketch", "sketch_path", b.slots->sketch_path, "sketch file");
    b.opt("--sweep-steps", "sweep_steps", b.slots->sweep_steps,
          "grid of masking-round counts");
    b.opt("--sweep-paths", "sweep_paths", b.slots->sweep_paths,
          "grid of path counts");
  }
  {
    auto& b = add(5, "ablate", "compare full, rhp, rcr, rmr and baseline",
                  matt::cmd_ablate);
    b.common();
    b.infer_knobs();
    b.opt("--test", "test_path", b.slots->test_path, "test TSV to read");
    b.opt("--model", "model_path", b.slots->model_path, "model file");
    b.opt("--vocab", "vocab_path", b.slots->vocab_path, "vocabulary file");
    b.opt("--sketch", "sketch_path", b.slots->sketch_path,
          "sketch for full/rcr/rmr");
    b.opt("--plain-sketch", "plain_sketch_path", b.slots->plain_sketch_path,
          "non-peeled sketch for rhp");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (std::size_t i = 0; i < binders.size(); ++i) {
    if (!binders[i].cmd->parsed()) continue;
    try {
      actions[i](binders[i].merged());
      return 0;
    } catch (const matt::ConfigError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    } catch (const matt::SchemaError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}
