#pragma once

// Reference CTR scorer: a second-order factorization machine with logistic
// output, trained by mini-batch Adam. The model is mask-aware by
// construction: row 0 of every field's weight and embedding table is pinned
// to zero and excluded from updates, so a masked field contributes nothing
// to the score. Unknown test-time ids fold into that same row (cold
// features become invisible rather than noise).

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "matt/core.hpp"
#include "matt/io.hpp"
#include "matt/rng.hpp"

namespace matt {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Anything that maps a (possibly masked) instance to a probability.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const Instance& inst) const = 0;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double l2 = 1e-6;
  std::uint32_t epochs = 10;
  std::uint32_t batch_size = 4096;
  std::uint64_t seed = 42;
  std::uint32_t dim = 8;
  double init_scale = 0.1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate <= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size < 1");
    if (dim < 1) throw ConfigError("train: dim < 1");
    if (epochs < 1) throw ConfigError("train: epochs < 1");
    if (l2 < 0.0) throw ConfigError("train: negative l2");
  }
};

class FmModel : public Scorer {
 public:
  static constexpr std::uint64_t kMagic = 0x314C444D46544D41ull;  // "AMTFMDL1"

  FmModel() = default;

  FmModel(std::vector<std::uint32_t> vocab_sizes, std::uint32_t dim)
      : vocab_sizes_(std::move(vocab_sizes)), dim_(dim) {
    offsets_.reserve(vocab_sizes_.size());
    std::uint64_t total = 0;
    for (std::uint32_t size : vocab_sizes_) {
      if (size < 1) throw ConfigError("fm: field vocab size must be >= 1");
      offsets_.push_back(total);
      total += size;
    }
    linear_.assign(total, 0.0);
    embed_.assign(total * dim_, 0.0);
  }

  FmModel(const FmModel& other) { *this = other; }
  FmModel& operator=(const FmModel& other) {
    vocab_sizes_ = other.vocab_sizes_;
    offsets_ = other.offsets_;
    dim_ = other.dim_;
    bias_ = other.bias_;
    linear_ = other.linear_;
    embed_ = other.embed_;
    unknown_ids_.store(other.unknown_ids_.load());
    return *this;
  }

  std::uint32_t n_fields() const {
    return static_cast<std::uint32_t>(vocab_sizes_.size());
  }
  std::uint32_t dim() const { return dim_; }
  const std::vector<std::uint32_t>& vocab_sizes() const { return vocab_sizes_; }
  std::uint64_t rows() const { return linear_.size(); }

  double bias() const { return bias_; }
  double& bias() { return bias_; }
  std::span<const double> linear() const { return linear_; }
  std::span<double> linear() { return linear_; }
  std::span<const double> embeddings() const { return embed_; }
  std::span<double> embeddings() { return embed_; }

  // Out-of-vocabulary ids seen by score(); they fold into the mask row.
  std::uint64_t unknown_id_count() const { return unknown_ids_.load(); }

  std::uint64_t row_of(FieldId field, std::uint32_t value) const {
    if (value >= vocab_sizes_[field]) {
      unknown_ids_.fetch_add(1, std::memory_order_relaxed);
      value = kMaskValue;
    }
    return offsets_[field] + value;
  }

  // Raw FM logit over non-masked features using the sum-of-squares identity:
  // sum_{i<j} <v_i, v_j> = (|sum v|^2 - sum |v|^2) / 2 per dimension.
  double logit(const Instance& inst) const {
    if (inst.n_fields() != n_fields())
      throw InvalidInputError("fm: instance field count does not match model");
    double z = bias_;
    double pair_sum = 0.0;
    double* sums = sum_scratch_local();
    for (std::uint32_t d = 0; d < dim_; ++d) sums[d] = 0.0;
    for (FieldId f = 0; f < inst.n_fields(); ++f) {
      std::uint32_t value = inst.values[f];
      if (value == kMaskValue) continue;
      std::uint64_t row = row_of(f, value);
      z += linear_[row];
      const double* v = &embed_[row * dim_];
      for (std::uint32_t d = 0; d < dim_; ++d) {
        sums[d] += v[d];
        pair_sum -= v[d] * v[d];
      }
    }
    for (std::uint32_t d = 0; d < dim_; ++d) pair_sum += sums[d] * sums[d];
    return z + 0.5 * pair_sum;
  }

  double score(const Instance& inst) const override {
    return sigmoid(logit(inst));
  }

  void save(std::ostream& os) const {
    io::write_u64(os, kMagic);
    io::write_u32(os, 1);  // format version
    io::write_u32(os, n_fields());
    for (std::uint32_t s : vocab_sizes_) io::write_u32(os, s);
    io::write_u32(os, dim_);
    io::write_f64(os, bias_);
    for (double w : linear_) io::write_f64(os, w);
    for (double v : embed_) io::write_f64(os, v);
  }

  static FmModel load(std::istream& is) {
    io::expect_magic(is, kMagic, "model snapshot");
    std::uint32_t version = io::read_u32(is);
    if (version != 1) throw io::StreamError("unsupported model snapshot version");
    std::uint32_t n = io::read_u32(is);
    std::vector<std::uint32_t> sizes(n);
    for (auto& s : sizes) s = io::read_u32(is);
    std::uint32_t dim = io::read_u32(is);
    FmModel m(std::move(sizes), dim);
    m.bias_ = io::read_f64(is);
    for (double& w : m.linear_) w = io::read_f64(is);
    for (double& v : m.embed_) v = io::read_f64(is);
    return m;
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    save(os);
    if (!os) throw io::StreamError("short write: " + path);
  }

  static FmModel load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path);
    return load(is);
  }

 private:
  // Per-thread scratch so score() stays const and thread-safe without
  // allocating on every call.
  double* sum_scratch_local() const {
    thread_local std::vector<double> scratch;
    if (scratch.size() < dim_) scratch.resize(dim_);
    return scratch.data();
  }

  std::vector<std::uint32_t> vocab_sizes_;
  std::vector<std::uint64_t> offsets_;
  std::uint32_t dim_ = 0;
  double bias_ = 0.0;
  std::vector<double> linear_;
  std::vector<double> embed_;
  mutable std::atomic<std::uint64_t> unknown_ids_{0};
};

// Mean stable binary cross-entropy plus l2 * ||theta||^2 (bias excluded).
inline double fm_batch_loss(const FmModel& model,
                            std::span<const Instance> batch, double l2) {
  if (batch.empty()) throw InvalidInputError("fm loss: empty batch");
  double total = 0.0;
  for (const Instance& inst : batch) {
    double z = model.logit(inst);
    double y = inst.label ? 1.0 : 0.0;
    // max(z,0) - z*y + log(1 + exp(-|z|)) is BCE on the logit without
    // overflow on either tail.
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  double loss = total / static_cast<double>(batch.size());
  double reg = 0.0;
  for (double w : model.linear()) reg += w * w;
  for (double v : model.embeddings()) reg += v * v;
  return loss + l2 * reg;
}

struct FmGradients {
  double bias = 0.0;
  std::vector<double> linear;
  std::vector<double> embed;
};

// Analytic gradient of fm_batch_loss at the model's current parameters.
// dz/dv_i = (sum_j v_j) - v_i for active rows; mask rows take no gradient.
inline FmGradients fm_batch_gradient(const FmModel& model,
                                     std::span<const Instance> batch,
                                     double l2) {
  if (batch.empty()) throw InvalidInputError("fm gradient: empty batch");
  const std::uint32_t dim = model.dim();
  FmGradients g;
  g.linear.assign(model.rows(), 0.0);
  g.embed.assign(model.rows() * dim, 0.0);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> sums(dim);
  std::vector<std::uint64_t> active_rows;
  for (const Instance& inst : batch) {
    double z = model.logit(inst);
    double err = (sigmoid(z) - (inst.label ? 1.0 : 0.0)) * inv_b;
    g.bias += err;
    std::fill(sums.begin(), sums.end(), 0.0);
    active_rows.clear();
    for (FieldId f = 0; f < inst.n_fields(); ++f) {
      if (inst.values[f] == kMaskValue) continue;
      std::uint64_t row = model.row_of(f, inst.values[f]);
      active_rows.push_back(row);
      const double* v = &model.embeddings()[row * dim];
      for (std::uint32_t d = 0; d < dim; ++d) sums[d] += v[d];
    }
    for (std::uint64_t row : active_rows) {
      g.linear[row] += err;
      const double* v = &model.embeddings()[row * dim];
      double* gv = &g.embed[row * dim];
      for (std::uint32_t d = 0; d < dim; ++d)
        gv[d] += err * (sums[d] - v[d]);
    }
  }

  if (l2 > 0.0) {
    for (std::size_t i = 0; i < g.linear.size(); ++i)
      g.linear[i] += 2.0 * l2 * model.linear()[i];
    for (std::size_t i = 0; i < g.embed.size(); ++i)
      g.embed[i] += 2.0 * l2 * model.embeddings()[i];
  }

  // Pin the mask rows: no update reaches them regardless of l2 or
  // collisions with unknown ids.
  for (FieldId f = 0; f < model.n_fields(); ++f) {
    std::uint64_t row = model.row_of(f, kMaskValue);
    g.linear[row] = 0.0;
    for (std::uint32_t d = 0; d < dim; ++d) g.embed[row * dim + d] = 0.0;
  }
  return g;
}

namespace detail {

// One Adam parameter bank; updates in place.
class AdamState {
 public:
  explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads,
            double lr, std::uint64_t t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
      params[i] -= lr * (m_[i] / corr1) / (std::sqrt(v_[i] / corr2) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
};

}  // namespace detail

// Mini-batch Adam on BCE + l2. Deterministic: embedding init and epoch
// shuffles come from seed-derived streams, batches accumulate in index
// order. Emits a warning (not an error) when only one class is present.
inline FmModel train_fm(std::span<const Instance> dataset,
                        const TrainConfig& config,
                        std::vector<std::uint32_t> vocab_sizes) {
  config.validate();
  if (dataset.empty()) throw InvalidInputError("train: empty dataset");
  bool has_pos = false, has_neg = false;
  for (const Instance& inst : dataset) (inst.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    std::cerr << "warning: training data contains a single class\n";

  FmModel model(std::move(vocab_sizes), config.dim);
  {
    Rng init_rng(derive_seed(config.seed, kStreamInit));
    auto embed = model.embeddings();
    for (FieldId f = 0; f < model.n_fields(); ++f) {
      std::uint64_t base = model.row_of(f, kMaskValue);
      // Row 0 stays zero; real rows get small centered noise.
      for (std::uint32_t v = 1; v < model.vocab_sizes()[f]; ++v)
        for (std::uint32_t d = 0; d < config.dim; ++d)
          embed[(base + v) * config.dim + d] =
              config.init_scale * init_rng.gaussian();
    }
  }

  detail::AdamState adam_bias(1), adam_linear(model.rows()),
      adam_embed(model.rows() * config.dim);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Instance> batch;
  std::uint64_t t = 0;

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, kStreamShuffle, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(dataset[order[i]]);
      FmGradients g = fm_batch_gradient(model, batch, config.l2);
      ++t;
      double bias = model.bias();
      adam_bias.step(std::span<double>(&bias, 1),
                     std::span<const double>(&g.bias, 1),
                     config.learning_rate, t);
      model.bias() = bias;
      adam_linear.step(model.linear(), g.linear, config.learning_rate, t);
      adam_embed.step(model.embeddings(), g.embed, config.learning_rate, t);
      // Adam's epsilon nudges even zero-gradient rows; re-pin the mask rows.
      for (FieldId f = 0; f < model.n_fields(); ++f) {
        std::uint64_t row = model.row_of(f, kMaskValue);
        model.linear()[row] = 0.0;
        for (std::uint32_t d = 0; d < config.dim; ++d)
          model.embeddings()[row * config.dim + d] = 0.0;
      }
    }
  }
  return model;
}

// Convenience overload: vocab sizes read off the training split itself
// (max value id per field, plus the mask row).
inline FmModel train_fm(std::span<const Instance> dataset,
                        const TrainConfig& config) {
  if (dataset.empty()) throw InvalidInputError("train: empty dataset");
  std::vector<std::uint32_t> sizes(dataset.front().n_fields(), 1);
  for (const Instance& inst : dataset) {
    if (inst.n_fields() != sizes.size())
      throw SchemaError("train: ragged field counts in dataset");
    for (FieldId f = 0; f < inst.n_fields(); ++f)
      sizes[f] = std::max(sizes[f], inst.values[f] + 1);
  }
  return train_fm(dataset, config, std::move(sizes));
}

}  // namespace matt
