#pragma once

// Hierarchical frequency sketch with heavy-hitter peeling.
//
// Per combination order m there is a bank of L hashed counter tables plus a
// fixed-capacity min-heap of exactly counted heavy hitters. A combo already
// in the heap is counted there and never touches the tables again. A combo
// not in the heap updates all L cells; if its min-query estimate beats the
// current heap minimum it is admitted with that estimate and the estimate is
// peeled (subtracted) out of its cells, so the tables approximate the
// residual stream of non-heavy traffic. Evicted entries get their count
// added back to their cells.
//
// confidence() is the signal the inference sampler consumes: exact counts
// for heap members, otherwise a distribution-based lower bound on the true
// count derived from the combo's table readings. Low-frequency and unseen
// combos score near zero, which is what marks them unreliable downstream.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "matt/core.hpp"
#include "matt/io.hpp"
#include "matt/rng.hpp"

namespace matt {

// Heavy-hitter capacity rule when no explicit capacity is configured: 0.1%
// of the distinct combos at that order with frequency above this threshold,
// floored at one slot.
inline constexpr std::int64_t kCapacityFreqThreshold = 10;

inline std::uint32_t heap_capacity_rule(std::uint64_t distinct_over_threshold) {
  std::uint64_t c = (distinct_over_threshold + 999) / 1000;
  return static_cast<std::uint32_t>(c > 0 ? c : 1);
}

struct SketchConfig {
  std::uint32_t max_order = 2;
  std::uint32_t tables = 4;
  // Table width per order; the last entry carries upward if orders exceed it.
  std::vector<std::uint64_t> widths{1u << 18, 1u << 20};
  // Heap capacity per order; 0 or absent means derive from the data.
  std::vector<std::uint32_t> capacities{};
  double alpha = 0.05;
  bool peeling = true;
  std::uint64_t seed = 1;

  std::uint64_t width_for(std::uint32_t order) const {
    if (widths.empty()) throw ConfigError("sketch: no table widths");
    std::size_t i = std::min<std::size_t>(order - 1, widths.size() - 1);
    if (widths[i] == 0) throw ConfigError("sketch: zero table width");
    return widths[i];
  }

  std::uint32_t capacity_for(std::uint32_t order) const {
    if (order - 1 < capacities.size()) return capacities[order - 1];
    return 0;
  }

  void validate() const {
    if (max_order < 1) throw ConfigError("sketch: max_order < 1");
    if (tables < 1) throw ConfigError("sketch: need at least one table");
    if (!(alpha > 0.0) || !(alpha < 1.0))
      throw ConfigError("sketch: alpha outside (0, 1)");
    for (std::uint32_t m = 1; m <= max_order; ++m) width_for(m);
  }
};

// Inputs to the lower-bound formula, gathered from one combo's readings
// across the L tables of its order.
struct LowerBoundInputs {
  std::vector<std::int64_t> values;  // strictly positive readings
  std::size_t n = 0;                 // count of positive readings
  double mu = 0.0;                   // mean of values
  double sigma = 0.0;                // population stddev of values
  std::int64_t upper = 0;            // min over all readings (the min-query)
  double k2 = 0.0;                   // mu - upper
};

inline LowerBoundInputs gather_lower_bound_inputs(
    std::span<const std::int64_t> readings) {
  LowerBoundInputs in;
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t r : readings) {
    lo = std::min(lo, r);
    if (r > 0) {
      in.values.push_back(r);
      sum += static_cast<double>(r);
      sum_sq += static_cast<double>(r) * static_cast<double>(r);
    }
  }
  in.upper = readings.empty() ? 0 : std::max<std::int64_t>(lo, 0);
  in.n = in.values.size();
  if (in.n > 0) {
    in.mu = sum / static_cast<double>(in.n);
    double var = sum_sq / static_cast<double>(in.n) - in.mu * in.mu;
    in.sigma = std::sqrt(std::max(var, 0.0));
    in.k2 = in.mu - static_cast<double>(in.upper);
  }
  return in;
}

// One-sided concentration bound on the residual count given the spread of
// the combo's readings. Degenerate spreads (no positive readings, zero
// variance, or a reading at the mean's distance bound) fall back to the
// min-query value, which is always a valid upper estimate.
inline double chebyshev_lower_bound(const LowerBoundInputs& in, double alpha) {
  if (in.n == 0) return 0.0;
  const double upper = static_cast<double>(in.upper);
  if (in.sigma == 0.0 || in.k2 == 0.0) return upper;
  double d = 1.0 / (in.sigma * in.sigma) - alpha / (in.k2 * in.k2);
  if (d <= 0.0) return upper;
  double b = in.mu - 1.0 / std::sqrt(d);
  if (b < 0.0) return 0.0;
  if (b > upper) return upper;
  return b;
}

// Counter bank plus heavy-hitter heap for one combination order.
class OrderSketch {
 public:
  struct HeapEntry {
    ComboKey key;
    std::int64_t count = 0;
  };

  OrderSketch(std::uint32_t order, std::uint32_t tables, std::uint64_t width,
              std::uint32_t capacity, bool peeling, std::uint64_t seed)
      : order_(order),
        width_(width),
        capacity_(capacity),
        peeling_(peeling),
        cells_(static_cast<std::size_t>(tables) * width, 0),
        seeds_(tables) {
    for (std::uint32_t j = 0; j < tables; ++j)
      seeds_[j] = derive_seed(seed, kStreamSketchTable, order, j);
  }

  std::uint32_t order() const { return order_; }
  std::uint32_t tables() const { return static_cast<std::uint32_t>(seeds_.size()); }
  std::uint64_t width() const { return width_; }
  std::uint32_t capacity() const { return capacity_; }
  bool peeling() const { return peeling_; }
  std::uint64_t total_events() const { return total_events_; }
  std::span<const HeapEntry> heap() const { return heap_; }

  bool in_heap(const ComboKey& key) const {
    return slot_of_.find(key) != slot_of_.end();
  }

  // Current cell readings for the key, one per table.
  std::vector<std::int64_t> table_readings(const ComboKey& key) const {
    std::vector<std::int64_t> out(tables());
    for (std::uint32_t j = 0; j < tables(); ++j) out[j] = cell(j, key);
    return out;
  }

  void observe(const ComboKey& key, std::int64_t delta) {
    if (delta < 1) throw InvalidInputError("sketch: observe delta < 1");
    total_events_ += static_cast<std::uint64_t>(delta);
    if (auto it = slot_of_.find(key); it != slot_of_.end()) {
      heap_[it->second].count += delta;
      sift_down(it->second);
      return;
    }
    for (std::uint32_t j = 0; j < tables(); ++j) cell(j, key) += delta;
    if (!peeling_ || capacity_ == 0) return;
    std::int64_t est = min_query(key);
    if (heap_.size() < capacity_) {
      admit(key, est);
    } else if (est > heap_.front().count) {
      // Evict the current minimum: its count flows back into its cells so
      // the tables keep covering it, then the newcomer takes the root slot.
      HeapEntry evicted = std::move(heap_.front());
      slot_of_.erase(evicted.key);
      heap_.front() = HeapEntry{key, est};
      slot_of_[key] = 0;
      peel(key, est);
      sift_down(0);
      for (std::uint32_t j = 0; j < tables(); ++j)
        cell(j, evicted.key) += evicted.count;
    }
  }

  // Min-query over the tables; exact heap count for heap members. Never
  // underestimates the true count.
  std::int64_t estimate_upper(const ComboKey& key) const {
    if (auto it = slot_of_.find(key); it != slot_of_.end())
      return heap_[it->second].count;
    return min_query(key);
  }

  double lower_bound(const ComboKey& key, double alpha) const {
    auto readings = table_readings(key);
    return chebyshev_lower_bound(gather_lower_bound_inputs(readings), alpha);
  }

  double confidence(const ComboKey& key, double alpha) const {
    if (auto it = slot_of_.find(key); it != slot_of_.end())
      return static_cast<double>(heap_[it->second].count);
    return lower_bound(key, alpha);
  }

  std::int64_t min_query(const ComboKey& key) const {
    std::int64_t est = std::numeric_limits<std::int64_t>::max();
    for (std::uint32_t j = 0; j < tables(); ++j) est = std::min(est, cell(j, key));
    return est;
  }

  double nonzero_fraction() const {
    std::size_t nonzero = 0;
    for (std::int64_t c : cells_)
      if (c != 0) ++nonzero;
    return cells_.empty() ? 0.0
                          : static_cast<double>(nonzero) /
                                static_cast<double>(cells_.size());
  }

  void save(std::ostream& os) const {
    io::write_u32(os, order_);
    io::write_u32(os, tables());
    io::write_u64(os, width_);
    io::write_u32(os, capacity_);
    io::write_u8(os, peeling_ ? 1 : 0);
    io::write_u64(os, total_events_);
    for (std::uint64_t s : seeds_) io::write_u64(os, s);
    for (std::int64_t c : cells_) io::write_i64(os, c);
    io::write_u32(os, static_cast<std::uint32_t>(heap_.size()));
    for (const auto& e : heap_) {
      io::write_u32(os, e.key.order());
      for (const auto& m : e.key.members) {
        io::write_u32(os, m.field);
        io::write_u32(os, m.value);
      }
      io::write_i64(os, e.count);
    }
  }

  static OrderSketch load(std::istream& is) {
    std::uint32_t order = io::read_u32(is);
    std::uint32_t tables = io::read_u32(is);
    std::uint64_t width = io::read_u64(is);
    std::uint32_t capacity = io::read_u32(is);
    bool peeling = io::read_u8(is) != 0;
    OrderSketch s(order, tables, width, capacity, peeling, 0);
    s.total_events_ = io::read_u64(is);
    for (auto& seed : s.seeds_) seed = io::read_u64(is);
    for (auto& c : s.cells_) c = io::read_i64(is);
    std::uint32_t heap_size = io::read_u32(is);
    s.heap_.resize(heap_size);
    for (std::uint32_t i = 0; i < heap_size; ++i) {
      std::uint32_t members = io::read_u32(is);
      s.heap_[i].key.members.resize(members);
      for (auto& m : s.heap_[i].key.members) {
        m.field = io::read_u32(is);
        m.value = io::read_u32(is);
      }
      s.heap_[i].count = io::read_i64(is);
      s.slot_of_[s.heap_[i].key] = i;
    }
    return s;
  }

 private:
  std::int64_t& cell(std::uint32_t table, const ComboKey& key) {
    return cells_[static_cast<std::size_t>(table) * width_ + index_of(table, key)];
  }

  std::int64_t cell(std::uint32_t table, const ComboKey& key) const {
    return cells_[static_cast<std::size_t>(table) * width_ + index_of(table, key)];
  }

  std::uint64_t index_of(std::uint32_t table, const ComboKey& key) const {
    return key_hash(key, seeds_[table]) % width_;
  }

  void admit(const ComboKey& key, std::int64_t est) {
    heap_.push_back(HeapEntry{key, est});
    std::size_t slot = heap_.size() - 1;
    slot_of_[key] = slot;
    peel(key, est);
    sift_up(slot);
  }

  // Remove the admitted estimate from the key's cells, clamped at zero so a
  // colliding cell never goes negative.
  void peel(const ComboKey& key, std::int64_t est) {
    for (std::uint32_t j = 0; j < tables(); ++j) {
      std::int64_t& c = cell(j, key);
      c = std::max<std::int64_t>(0, c - est);
    }
  }

  void sift_up(std::size_t i) {
    while (i > 0) {
      std::size_t parent = (i - 1) / 2;
      if (heap_[parent].count <= heap_[i].count) break;
      swap_slots(i, parent);
      i = parent;
    }
  }

  void sift_down(std::size_t i) {
    for (;;) {
      std::size_t l = 2 * i + 1, r = 2 * i + 2, smallest = i;
      if (l < heap_.size() && heap_[l].count < heap_[smallest].count) smallest = l;
      if (r < heap_.size() && heap_[r].count < heap_[smallest].count) smallest = r;
      if (smallest == i) return;
      swap_slots(i, smallest);
      i = smallest;
    }
  }

  void swap_slots(std::size_t a, std::size_t b) {
    std::swap(heap_[a], heap_[b]);
    slot_of_[heap_[a].key] = a;
    slot_of_[heap_[b].key] = b;
  }

  std::uint32_t order_;
  std::uint64_t width_;
  std::uint32_t capacity_;
  bool peeling_;
  std::uint64_t total_events_ = 0;
  std::vector<std::int64_t> cells_;  // tables * width, row-major by table
  std::vector<std::uint64_t> seeds_;
  std::vector<HeapEntry> heap_;  // min-heap by count
  std::unordered_map<ComboKey, std::size_t, ComboKeyHash> slot_of_;
};

// Per-order stats emitted by sketch construction.
struct OrderStats {
  std::uint32_t order = 0;
  std::uint64_t distinct_combos = 0;
  std::uint64_t distinct_over_threshold = 0;
  std::uint32_t heap_capacity = 0;
  std::uint32_t heap_fill = 0;
  double table_load_factor = 0.0;
};

class ConfidenceSketch {
 public:
  static constexpr std::uint64_t kMagic = 0x314843534B54414Dull;  // "MATKSCH1"

  ConfidenceSketch(const SketchConfig& config,
                   std::vector<std::uint32_t> capacities)
      : config_(config) {
    config_.validate();
    if (capacities.size() != config_.max_order)
      throw ConfigError("sketch: capacity list does not match max_order");
    config_.capacities = capacities;
    orders_.reserve(config_.max_order);
    for (std::uint32_t m = 1; m <= config_.max_order; ++m)
      orders_.emplace_back(m, config_.tables, config_.width_for(m),
                           capacities[m - 1], config_.peeling, config_.seed);
  }

  // Two-pass construction. The first pass counts combos exactly to size each
  // order's heap by the capacity rule; it is skipped when every order has an
  // explicit capacity and no stats are requested. The second pass streams
  // every combo through observe().
  static ConfidenceSketch build(std::span<const Instance> dataset,
                                const SketchConfig& config,
                                std::vector<OrderStats>* stats = nullptr) {
    config.validate();
    if (dataset.empty()) throw ConfigError("sketch build: empty dataset");

    bool need_counts = stats != nullptr;
    for (std::uint32_t m = 1; m <= config.max_order; ++m)
      if (config.capacity_for(m) == 0) need_counts = true;

    std::vector<std::uint64_t> distinct(config.max_order, 0);
    std::vector<std::uint64_t> over_threshold(config.max_order, 0);
    if (need_counts) {
      std::vector<std::unordered_map<ComboKey, std::int64_t, ComboKeyHash>>
          counts(config.max_order);
      for (const Instance& inst : dataset)
        for_each_combo(inst, config.max_order,
                       [&counts](const ComboKey& k) { ++counts[k.order() - 1][k]; });
      for (std::uint32_t m = 0; m < config.max_order; ++m) {
        distinct[m] = counts[m].size();
        for (const auto& [key, n] : counts[m])
          if (n > kCapacityFreqThreshold) ++over_threshold[m];
      }
    }

    std::vector<std::uint32_t> capacities(config.max_order);
    for (std::uint32_t m = 1; m <= config.max_order; ++m) {
      std::uint32_t c = config.capacity_for(m);
      capacities[m - 1] = c > 0 ? c : heap_capacity_rule(over_threshold[m - 1]);
    }

    ConfidenceSketch sketch(config, capacities);
    for (const Instance& inst : dataset)
      for_each_combo(inst, config.max_order,
                     [&sketch](const ComboKey& k) { sketch.observe(k, 1); });

    if (stats) {
      stats->clear();
      for (std::uint32_t m = 1; m <= config.max_order; ++m) {
        const OrderSketch& os = sketch.order_sketch(m);
        OrderStats st;
        st.order = m;
        st.distinct_combos = distinct[m - 1];
        st.distinct_over_threshold = over_threshold[m - 1];
        st.heap_capacity = os.capacity();
        st.heap_fill = static_cast<std::uint32_t>(os.heap().size());
        st.table_load_factor = sketch.load_factor(m);
        stats->push_back(st);
      }
    }
    return sketch;
  }

  std::uint32_t max_order() const { return config_.max_order; }
  double alpha() const { return config_.alpha; }
  bool peeling() const { return config_.peeling; }
  const SketchConfig& config() const { return config_; }

  const OrderSketch& order_sketch(std::uint32_t order) const {
    check_order(order);
    return orders_[order - 1];
  }

  void observe(const ComboKey& key, std::int64_t delta) {
    check_order(key.order());
    orders_[key.order() - 1].observe(key, delta);
  }

  std::int64_t estimate_upper(const ComboKey& key) const {
    check_order(key.order());
    return orders_[key.order() - 1].estimate_upper(key);
  }

  double lower_bound(const ComboKey& key) const {
    check_order(key.order());
    return orders_[key.order() - 1].lower_bound(key, config_.alpha);
  }

  // Exact count for heap members, lower bound otherwise. Unseen combos come
  // out at zero.
  double confidence(const ComboKey& key) const {
    check_order(key.order());
    return orders_[key.order() - 1].confidence(key, config_.alpha);
  }

  // Plain multi-hash estimate: the min-query with no heavy-hitter handling.
  // Only meaningful on a sketch built without peeling, where the tables hold
  // the whole stream.
  std::int64_t plain_estimate(const ComboKey& key) const {
    if (config_.peeling)
      throw ConfigError("plain estimate requires a sketch built without peeling");
    check_order(key.order());
    return orders_[key.order() - 1].min_query(key);
  }

  // Fraction of nonzero cells across the order's tables.
  double load_factor(std::uint32_t order) const {
    check_order(order);
    return orders_[order - 1].nonzero_fraction();
  }

  void save(std::ostream& os) const {
    io::write_u64(os, kMagic);
    io::write_u32(os, 1);  // format version
    io::write_u8(os, config_.peeling ? 1 : 0);
    io::write_f64(os, config_.alpha);
    io::write_u64(os, config_.seed);
    io::write_u32(os, config_.max_order);
    for (const OrderSketch& o : orders_) o.save(os);
  }

  static ConfidenceSketch load(std::istream& is) {
    io::expect_magic(is, kMagic, "sketch snapshot");
    std::uint32_t version = io::read_u32(is);
    if (version != 1)
      throw io::StreamError("unsupported sketch snapshot version");
    ConfidenceSketch s;
    s.config_.peeling = io::read_u8(is) != 0;
    s.config_.alpha = io::read_f64(is);
    s.config_.seed = io::read_u64(is);
    s.config_.max_order = io::read_u32(is);
    s.config_.widths.clear();
    s.config_.capacities.clear();
    for (std::uint32_t m = 0; m < s.config_.max_order; ++m) {
      s.orders_.push_back(OrderSketch::load(is));
      s.config_.widths.push_back(s.orders_.back().width());
      s.config_.capacities.push_back(s.orders_.back().capacity());
    }
    if (!s.orders_.empty()) s.config_.tables = s.orders_.front().tables();
    return s;
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    save(os);
    if (!os) throw io::StreamError("short write: " + path);
  }

  static ConfidenceSketch load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path);
    return load(is);
  }

 private:
  ConfidenceSketch() = default;

  void check_order(std::uint32_t order) const {
    if (order < 1 || order > config_.max_order)
      throw ConfigError("sketch: order outside [1, max_order]");
  }

  SketchConfig config_;
  std::vector<OrderSketch> orders_;
};

}  // namespace matt
