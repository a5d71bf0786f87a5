#pragma once

// Domain types shared by the sketch, the sampler and the scorer: instances
// over a fixed field schema, feature-combination keys, and the combination
// enumerator that feeds sketch construction. Value id 0 is reserved in every
// field as the mask sentinel; it never appears in a ComboKey and the scorer
// pins its parameter rows to zero.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "matt/rng.hpp"

namespace matt {

using FieldId = std::uint32_t;

inline constexpr std::uint32_t kMaskValue = 0;

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One feature occurrence: (field index, value id within that field).
struct FeatureValue {
  FieldId field = 0;
  std::uint32_t value = 0;

  friend auto operator<=>(const FeatureValue&, const FeatureValue&) = default;
};

// A labelled instance holds one value id per field, dense in field order.
// Masked fields carry kMaskValue.
struct Instance {
  std::vector<std::uint32_t> values;
  std::uint8_t label = 0;

  std::uint32_t n_fields() const {
    return static_cast<std::uint32_t>(values.size());
  }

  // Non-masked features, ascending by field.
  std::vector<FeatureValue> active_features() const {
    std::vector<FeatureValue> out;
    out.reserve(values.size());
    for (FieldId f = 0; f < values.size(); ++f)
      if (values[f] != kMaskValue) out.push_back({f, values[f]});
    return out;
  }

  friend bool operator==(const Instance&, const Instance&) = default;
};

// Canonical key for a feature combination: members strictly increasing by
// field, so one combination has exactly one key (and one hash) no matter how
// it was assembled.
struct ComboKey {
  std::vector<FeatureValue> members;

  std::uint32_t order() const {
    return static_cast<std::uint32_t>(members.size());
  }

  friend bool operator==(const ComboKey&, const ComboKey&) = default;
};

// Serialized layout (also the snapshot encoding): u32 member count, then per
// member u32 field and u32 value, all little-endian.
inline void append_key_bytes(const ComboKey& key,
                             std::vector<unsigned char>& out) {
  auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  };
  put_u32(key.order());
  for (const auto& m : key.members) {
    put_u32(m.field);
    put_u32(m.value);
  }
}

// 64-bit key hash: the member count and each (field, value) pair are folded
// through the avalanche mixer. Equivalent keys hash equal by canonical form.
inline std::uint64_t key_hash(const ComboKey& key, std::uint64_t seed) {
  std::uint64_t h = hash_combine(seed, key.order());
  for (const auto& m : key.members) {
    std::uint64_t packed =
        (static_cast<std::uint64_t>(m.field) << 32) | m.value;
    h = hash_combine(h, packed);
  }
  return h;
}

struct ComboKeyHash {
  std::size_t operator()(const ComboKey& key) const {
    return static_cast<std::size_t>(key_hash(key, 0));
  }
};

// Builds the canonical key for an arbitrary feature list. Rejects lists that
// cannot name a combination: empty, masked members, or two members in the
// same field.
inline ComboKey canonical_combo(std::vector<FeatureValue> features) {
  if (features.empty())
    throw InvalidInputError("combo: empty feature list");
  for (const auto& f : features)
    if (f.value == kMaskValue)
      throw InvalidInputError("combo: masked feature value");
  std::sort(features.begin(), features.end());
  for (std::size_t i = 1; i < features.size(); ++i)
    if (features[i].field == features[i - 1].field)
      throw SchemaError("combo: duplicate field");
  return ComboKey{std::move(features)};
}

// Visits every feature combination of the instance's non-masked features up
// to max_order, orders ascending, fields ascending within an order. The key
// passed to fn is a scratch buffer valid only during the call; copy it to
// keep it.
template <class Fn>
void for_each_combo(const Instance& inst, std::uint32_t max_order, Fn&& fn) {
  if (max_order < 1) throw ConfigError("combo enumeration: max_order < 1");
  const std::vector<FeatureValue> active = inst.active_features();
  const std::uint32_t n = static_cast<std::uint32_t>(active.size());
  ComboKey key;
  std::vector<std::uint32_t> idx;
  for (std::uint32_t m = 1; m <= max_order && m <= n; ++m) {
    idx.resize(m);
    for (std::uint32_t i = 0; i < m; ++i) idx[i] = i;
    for (;;) {
      key.members.clear();
      for (std::uint32_t i : idx) key.members.push_back(active[i]);
      fn(static_cast<const ComboKey&>(key));
      // Advance to the next m-combination of [0, n).
      std::int32_t i = static_cast<std::int32_t>(m) - 1;
      while (i >= 0 && idx[i] == n - m + i) --i;
      if (i < 0) break;
      ++idx[i];
      for (std::uint32_t j = i + 1; j < m; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
}

inline std::vector<ComboKey> enumerate_combos(const Instance& inst,
                                              std::uint32_t max_order) {
  std::vector<ComboKey> out;
  for_each_combo(inst, max_order, [&out](const ComboKey& k) { out.push_back(k); });
  return out;
}

}  // namespace matt
