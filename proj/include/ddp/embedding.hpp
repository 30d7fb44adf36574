// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddp/config.hpp"
#include "ddp/nn_core.hpp"

namespace ddp {

/// How raw values of a field become vocabulary slots. `Hash` is the default
/// hashing trick; `Identity` expects integer values already in [0, vocab).
enum class FieldEncoding { Hash, Identity };

struct FieldSpec {
  std::string name;
  std::size_t vocab = 0;
  bool multi_hot = false;
  FieldEncoding encoding = FieldEncoding::Hash;
  std::size_t offset = 0;
};

class Schema {
 public:
  Schema() = default;

  /// Offsets are assigned in declaration order.
  explicit Schema(std::vector<FieldSpec> fields, std::optional<std::string> item_field = {})
      : fields_(std::move(fields)) {
    if (fields_.empty()) fail(ErrorCode::ConfigError, "schema needs at least one field");
    std::size_t offset = 0;
    for (auto& f : fields_) {
      if (f.vocab == 0) fail(ErrorCode::ConfigError, "field '" + f.name + "' has vocab 0");
      f.offset = offset;
      offset += f.vocab;
    }
    total_ = offset;
    if (item_field) {
      auto idx = field_index(*item_field);
      if (!idx) fail(ErrorCode::NoItemField, "item field '" + *item_field + "' not in schema");
      item_field_ = *idx;
    }
  }

  static Schema parse(const KeyValueDoc& doc) {
    const auto names = split(doc.raw("schema.fields"), ',');
    std::vector<FieldSpec> fields;
    for (const auto& n : names) {
      FieldSpec f;
      f.name = trim(n);
      const std::string prefix = "field." + f.name + ".";
      f.vocab = doc.require<std::size_t>(prefix + "vocab");
      f.multi_hot = doc.get<bool>(prefix + "multi_hot", false);
      const auto enc = doc.get_string(prefix + "encoding", "hash");
      if (enc == "hash") {
        f.encoding = FieldEncoding::Hash;
      } else if (enc == "identity") {
        f.encoding = FieldEncoding::Identity;
      } else {
        fail(ErrorCode::ConfigError, "field '" + f.name + "': unknown encoding '" + enc + "'");
      }
      fields.push_back(std::move(f));
    }
    doc.reject_unknown([&](const std::string& key) {
      if (key == "schema.fields" || key == "schema.item_field") return true;
      for (const auto& f : fields) {
        const std::string prefix = "field." + f.name + ".";
        if (key == prefix + "vocab" || key == prefix + "multi_hot" || key == prefix + "encoding")
          return true;
      }
      return false;
    });
    std::optional<std::string> item;
    if (doc.has("schema.item_field")) item = doc.raw("schema.item_field");
    return Schema(std::move(fields), item);
  }

  static Schema load(const std::string& path) { return parse(KeyValueDoc::load(path)); }

  std::string serialize() const {
    KeyValueDoc doc;
    std::string names;
    for (const auto& f : fields_) names += (names.empty() ? "" : ",") + f.name;
    doc.set("schema.fields", names);
    if (item_field_) doc.set("schema.item_field", fields_[*item_field_].name);
    for (const auto& f : fields_) {
      const std::string prefix = "field." + f.name + ".";
      doc.set(prefix + "vocab", std::to_string(f.vocab));
      doc.set(prefix + "multi_hot", f.multi_hot ? "true" : "false");
      doc.set(prefix + "encoding", f.encoding == FieldEncoding::Hash ? "hash" : "identity");
    }
    return doc.serialize();
  }

  std::string digest() const { return hex64(fnv1a64(serialize())); }

  std::size_t num_fields() const { return fields_.size(); }
  std::size_t total_values() const { return total_; }
  const std::vector<FieldSpec>& fields() const { return fields_; }
  const FieldSpec& field(std::size_t i) const { return fields_.at(i); }
  std::optional<std::size_t> item_field() const { return item_field_; }

  std::optional<std::size_t> field_index(const std::string& name) const {
    for (std::size_t i = 0; i < fields_.size(); ++i)
      if (fields_[i].name == name) return i;
    return std::nullopt;
  }

 private:
  std::vector<FieldSpec> fields_;
  std::size_t total_ = 0;
  std::optional<std::size_t> item_field_;
};

/// A raw instance: field name -> one or more categorical values.
using RawInstance = std::map<std::string, std::vector<std::string>>;

struct EncodedInstance {
  /// Global indices of every field, concatenated in field order.
  std::vector<std::uint32_t> indices;
  /// field_end[f] is one past the last index of field f in `indices`.
  std::vector<std::uint32_t> field_end;
  int label = 0;
  /// Global index of the designated item field (its first value).
  std::uint32_t item_id = 0;
  /// 1-based period tag; 0 when not known.
  std::uint32_t period = 0;
  /// Position in the source stream, unique per stream.
  std::uint64_t id = 0;

  std::size_t num_fields() const { return field_end.size(); }

  std::span<const std::uint32_t> field(std::size_t f) const {
    const std::uint32_t begin = f == 0 ? 0 : field_end[f - 1];
    return {indices.data() + begin, field_end[f] - begin};
  }

  friend bool operator==(const EncodedInstance&, const EncodedInstance&) = default;
};

/// Builds an instance directly from per-field local value ids (identity
/// encoding, one-hot). Used by the synthetic generator and by tests.
inline EncodedInstance make_instance(const Schema& schema, std::span<const std::uint32_t> local,
                                     int label) {
  if (local.size() != schema.num_fields())
    fail(ErrorCode::DimMismatch, "expected one value per field");
  EncodedInstance inst;
  inst.label = label;
  inst.indices.reserve(local.size());
  inst.field_end.reserve(local.size());
  for (std::size_t f = 0; f < local.size(); ++f) {
    const auto& spec = schema.field(f);
    if (local[f] >= spec.vocab) fail(ErrorCode::IndexOutOfRange, "value outside vocab of " + spec.name);
    inst.indices.push_back(static_cast<std::uint32_t>(spec.offset + local[f]));
    inst.field_end.push_back(static_cast<std::uint32_t>(inst.indices.size()));
  }
  if (auto item = schema.item_field()) inst.item_id = inst.indices[inst.field_end[*item] - 1];
  return inst;
}

inline std::uint32_t encode_value(const FieldSpec& spec, const std::string& value) {
  if (spec.encoding == FieldEncoding::Identity) {
    std::uint64_t v = 0;
    if (!parse_number(value, v) || v >= spec.vocab) {
      fail(ErrorCode::InvalidValue,
           "field '" + spec.name + "': '" + value + "' is not an id in [0, vocab)");
    }
    return static_cast<std::uint32_t>(spec.offset + v);
  }
  return static_cast<std::uint32_t>(spec.offset + fnv1a64(value) % spec.vocab);
}

/// Maps raw categorical values to global indices. Pure and deterministic.
inline EncodedInstance encode(const RawInstance& raw, const Schema& schema, int label = 0) {
  for (const auto& [name, _] : raw) {
    if (!schema.field_index(name)) fail(ErrorCode::UnknownField, "field '" + name + "'");
  }
  EncodedInstance inst;
  inst.label = label;
  inst.field_end.reserve(schema.num_fields());
  for (const auto& spec : schema.fields()) {
    auto it = raw.find(spec.name);
    if (it == raw.end()) fail(ErrorCode::MissingColumn, "field '" + spec.name + "' absent");
    const auto& values = it->second;
    if (values.empty()) {
      if (spec.multi_hot) fail(ErrorCode::EmptyMultihot, "field '" + spec.name + "'");
      fail(ErrorCode::InvalidValue, "one-hot field '" + spec.name + "' has no value");
    }
    if (!spec.multi_hot && values.size() != 1) {
      fail(ErrorCode::InvalidValue, "one-hot field '" + spec.name + "' has several values");
    }
    for (const auto& v : values) inst.indices.push_back(encode_value(spec, v));
    inst.field_end.push_back(static_cast<std::uint32_t>(inst.indices.size()));
  }
  if (auto item = schema.item_field()) inst.item_id = inst.field(*item).front();
  return inst;
}

/// The dense embedding table E (N x d) with mean pooling over multi-hot sets
/// and touched-row gradient routing.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  template <typename Rng>
  EmbeddingTable(const Schema& schema, std::size_t dim, Rng& rng)
      : slot_("embedding.E", schema.total_values(), dim, UpdateGroup::Adam, true),
        num_fields_(schema.num_fields()) {
    if (dim == 0) fail(ErrorCode::ConfigError, "embedding dim must be > 0");
    fill_uniform(slot_.values, -0.01, 0.01, rng);
  }

  std::size_t dim() const { return slot_.cols(); }
  std::size_t rows() const { return slot_.rows(); }
  std::size_t num_fields() const { return num_fields_; }
  ParamSlot& slot() { return slot_; }
  const ParamSlot& slot() const { return slot_; }

  /// Writes the M pooled field embeddings of each instance into row i of
  /// `out` starting at `col`. When `record` is set the batch is remembered
  /// for the following scatter_grad.
  void lookup(std::span<const EncodedInstance> batch, Real* out, std::size_t stride,
              std::size_t col, bool record) {
    lookup_impl(batch, out, stride, col);
    if (record) {
      active_ = batch;
      has_active_ = true;
    }
  }

  void lookup(std::span<const EncodedInstance> batch, Real* out, std::size_t stride,
              std::size_t col) const {
    lookup_impl(batch, out, stride, col);
  }

  /// Per-instance convenience form returning e_1..e_M.
  std::vector<std::vector<Real>> lookup(const EncodedInstance& inst) const {
    std::vector<Real> flat(num_fields_ * dim());
    lookup(std::span(&inst, 1), flat.data(), flat.size(), 0);
    std::vector<std::vector<Real>> out(num_fields_);
    for (std::size_t f = 0; f < num_fields_; ++f)
      out[f].assign(flat.begin() + f * dim(), flat.begin() + (f + 1) * dim());
    return out;
  }

  /// Accumulates upstream / |index set| into each touched row. `upstream`
  /// row i holds d(loss)/d(e_1..e_M) for instance i of the recorded batch.
  void scatter_grad(const Real* upstream, std::size_t stride, std::size_t col) {
    if (!has_active_) fail(ErrorCode::NoActiveLookup, "scatter_grad without a recorded lookup");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < active_.size(); ++i) {
      const auto& inst = active_[i];
      const Real* up = upstream + i * stride + col;
      for (std::size_t f = 0; f < num_fields_; ++f) {
        const auto idx = inst.field(f);
        const Real scale = Real(1) / static_cast<Real>(idx.size());
        for (auto k : idx) {
          Real* g = slot_.grad.data.data() + static_cast<std::size_t>(k) * d;
          for (std::size_t j = 0; j < d; ++j) g[j] += scale * up[f * d + j];
          slot_.mark_row(k);
        }
      }
    }
    has_active_ = false;
    active_ = {};
  }

 private:
  void lookup_impl(std::span<const EncodedInstance> batch, Real* out, std::size_t stride,
                   std::size_t col) const {
    const std::size_t d = dim();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& inst = batch[i];
      if (inst.num_fields() != num_fields_)
        fail(ErrorCode::DimMismatch, "instance field count differs from schema");
      Real* dst = out + i * stride + col;
      for (std::size_t f = 0; f < num_fields_; ++f) {
        const auto idx = inst.field(f);
        Real* e = dst + f * d;
        std::fill(e, e + d, Real(0));
        for (auto k : idx) {
          if (k >= rows()) fail(ErrorCode::IndexOutOfRange, "embedding index " + std::to_string(k));
          const Real* r = slot_.values.data.data() + static_cast<std::size_t>(k) * d;
          for (std::size_t j = 0; j < d; ++j) e[j] += r[j];
        }
        if (idx.size() > 1) {
          const Real inv = Real(1) / static_cast<Real>(idx.size());
          for (std::size_t j = 0; j < d; ++j) e[j] *= inv;
        }
      }
    }
  }

  ParamSlot slot_;
  std::size_t num_fields_ = 0;
  std::span<const EncodedInstance> active_;
  bool has_active_ = false;
};

}  // namespace ddp
