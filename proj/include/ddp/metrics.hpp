// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ddp/embedding.hpp"
#include "ddp/stream.hpp"

namespace ddp {

struct ScoredSet {
  std::vector<double> score;
  std::vector<int> label;
  std::vector<std::uint32_t> item;

  std::size_t size() const { return score.size(); }
};

/// Mann-Whitney AUC with average ranks for ties. O(n log n).
inline double auc(std::span<const double> score, std::span<const int> label) {
  if (score.size() != label.size()) fail(ErrorCode::LengthMismatch, "scores vs labels");
  const std::size_t n = score.size();
  std::size_t pos = 0;
  for (int y : label) pos += y == 1 ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) fail(ErrorCode::DegenerateLabels, "AUC needs both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    // Ranks i+1..j+1 share their average.
    const double avg = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k)
      if (label[order[k]] == 1) rank_sum += avg;
    i = j + 1;
  }
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double auc(const ScoredSet& set) { return auc(set.score, set.label); }

inline double logloss(std::span<const double> score, std::span<const int> label) {
  if (score.empty()) fail(ErrorCode::EmptySet, "logloss on an empty set");
  if (score.size() != label.size()) fail(ErrorCode::LengthMismatch, "scores vs labels");
  double sum = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) sum += bce(score[i], label[i]);
  return sum / static_cast<double>(score.size());
}

inline double logloss(const ScoredSet& set) { return logloss(set.score, set.label); }

// ---------------------------------------------------------------------------
// Long-tail split

/// Training occurrence counts of item values (global indices).
using ItemCounts = std::map<std::uint32_t, std::uint64_t>;

inline ItemCounts count_items(std::span<const EncodedInstance> train, const Schema& schema) {
  if (!schema.item_field()) fail(ErrorCode::NoItemField, "schema has no item field");
  ItemCounts counts;
  for (const auto& inst : train) ++counts[inst.item_id];
  return counts;
}

/// The top `head_fraction` of distinct training items by frequency, ties
/// broken by lower index.
inline std::vector<std::uint32_t> short_hot_items(const ItemCounts& counts, double head_fraction = 0.2) {
  std::vector<std::pair<std::uint32_t, std::uint64_t>> items(counts.begin(), counts.end());
  std::erase_if(items, [](const auto& kv) { return kv.second == 0; });
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const auto k = static_cast<std::size_t>(
      std::llround(std::ceil(head_fraction * static_cast<double>(items.size()) - 1e-9)));
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < std::min(k, items.size()); ++i) out.push_back(items[i].first);
  std::sort(out.begin(), out.end());
  return out;
}

struct LongTailSplit {
  /// Positions into the test sequence.
  std::vector<std::size_t> short_hot;
  std::vector<std::size_t> long_tail;
  std::vector<std::uint32_t> hot_items;
};

inline LongTailSplit longtail_split(const ItemCounts& train_counts, std::span<const EncodedInstance> test,
                                    double head_fraction = 0.2) {
  LongTailSplit split;
  split.hot_items = short_hot_items(train_counts, head_fraction);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool hot = std::binary_search(split.hot_items.begin(), split.hot_items.end(), test[i].item_id);
    (hot ? split.short_hot : split.long_tail).push_back(i);
  }
  return split;
}

inline LongTailSplit longtail_split(std::span<const EncodedInstance> train, std::span<const EncodedInstance> test,
                                    const Schema& schema, double head_fraction = 0.2) {
  return longtail_split(count_items(train, schema), test, head_fraction);
}

// ---------------------------------------------------------------------------
// KL drift diagnostic

enum class Granularity { Feature, InstanceGroup };

inline std::string to_string(Granularity g) { return g == Granularity::Feature ? "FEATURE" : "INSTANCE_GROUP"; }

/// Two binary distributions (ctr, 1 - ctr).
struct KlPair {
  double q_ctr = 0.0;
  double p_ctr = 0.0;
  Granularity granularity = Granularity::Feature;
};

/// sum_i q(i) log(q(i)/p(i)) over the binary outcomes, components clamped.
inline double kl_distance(double q_ctr, double p_ctr) {
  const double q1 = clamp_prob(q_ctr), p1 = clamp_prob(p_ctr);
  const double q0 = 1.0 - q1, p0 = 1.0 - p1;
  return q0 * std::log(q0 / p0) + q1 * std::log(q1 / p1);
}

inline double kl_distance(const KlPair& pair) { return kl_distance(pair.q_ctr, pair.p_ctr); }

/// Instance groups are keyed by the full conjunction of field indices.
inline std::uint64_t instance_group_key(const EncodedInstance& inst) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t f = 0; f < inst.num_fields(); ++f) {
    for (auto k : inst.field(f)) {
      for (int b = 0; b < 4; ++b) {
        h ^= (k >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
    h ^= 0xffu;  // field separator
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct KlRow {
  std::size_t period = 0;  // 1-based
  std::string key;
  Granularity granularity = Granularity::Feature;
  double kl = 0.0;
  std::size_t impressions = 0;
  bool sparse = false;
};

struct KlReport {
  std::vector<KlRow> rows;
  /// Human-readable SPARSE_CELL notices.
  std::vector<std::string> warnings;

  /// Mean KL over cells with at least one impression.
  double mean(Granularity g) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.granularity == g && r.impressions > 0) {
        sum += r.kl;
        ++n;
      }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::UnreadableFile, "cannot write " + path);
    out.precision(10);
    out << "period,key,granularity,kl\n";
    for (const auto& r : rows) out << r.period << ',' << r.key << ',' << to_string(r.granularity) << ',' << r.kl << '\n';
  }
};

struct KlSelection {
  std::vector<std::uint32_t> features;       // global feature indices
  std::vector<std::uint64_t> instance_groups;  // instance_group_key values
};

inline constexpr std::size_t kMinCellImpressions = 10;

/// Per period: q = within-period empirical CTR of the key, p = its CTR over
/// all periods pooled.
inline KlReport kl_report(const PeriodStream& stream, const KlSelection& selection) {
  const std::size_t T = stream.num_periods();
  struct Cell {
    std::vector<std::uint64_t> shows, clicks;
  };
  std::map<std::uint32_t, Cell> feats;
  std::map<std::uint64_t, Cell> groups;
  for (auto f : selection.features) feats[f] = Cell{std::vector<std::uint64_t>(T), std::vector<std::uint64_t>(T)};
  for (auto g : selection.instance_groups)
    groups[g] = Cell{std::vector<std::uint64_t>(T), std::vector<std::uint64_t>(T)};

  for (std::size_t t = 0; t < T; ++t) {
    for (const auto& inst : stream.periods[t]) {
      for (auto k : inst.indices) {
        if (auto it = feats.find(k); it != feats.end()) {
          ++it->second.shows[t];
          it->second.clicks[t] += static_cast<std::uint64_t>(inst.label);
        }
      }
      if (!groups.empty()) {
        if (auto it = groups.find(instance_group_key(inst)); it != groups.end()) {
          ++it->second.shows[t];
          it->second.clicks[t] += static_cast<std::uint64_t>(inst.label);
        }
      }
    }
  }

  KlReport report;
  auto emit = [&](const std::string& key, const Cell& cell, Granularity g) {
    const double total_shows = std::accumulate(cell.shows.begin(), cell.shows.end(), 0.0);
    const double total_clicks = std::accumulate(cell.clicks.begin(), cell.clicks.end(), 0.0);
    const double avg = total_shows > 0 ? total_clicks / total_shows : 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      KlRow row;
      row.period = t + 1;
      row.key = key;
      row.granularity = g;
      row.impressions = cell.shows[t];
      row.sparse = cell.shows[t] < kMinCellImpressions;
      const double q = cell.shows[t] ? static_cast<double>(cell.clicks[t]) / static_cast<double>(cell.shows[t]) : avg;
      row.kl = kl_distance(q, avg);
      if (row.sparse) {
        report.warnings.push_back("SPARSE_CELL: " + key + " has " + std::to_string(cell.shows[t]) +
                                  " impressions in period " + std::to_string(t + 1));
      }
      report.rows.push_back(row);
    }
  };
  for (const auto& [f, cell] : feats) emit("feature:" + std::to_string(f), cell, Granularity::Feature);
  for (const auto& [g, cell] : groups) emit("group:" + hex64(g), cell, Granularity::InstanceGroup);
  return report;
}

/// Picks the `k` features and `k` instance groups with the largest
/// per-period minimum impression count (so each occurs in every period).
inline KlSelection select_kl_keys(const PeriodStream& stream, std::size_t k) {
  const std::size_t T = stream.num_periods();
  std::map<std::uint32_t, std::vector<std::uint64_t>> feats;
  std::map<std::uint64_t, std::vector<std::uint64_t>> groups;
  for (std::size_t t = 0; t < T; ++t) {
    for (const auto& inst : stream.periods[t]) {
      for (auto f : inst.indices) {
        auto& v = feats[f];
        if (v.empty()) v.resize(T);
        ++v[t];
      }
      auto& g = groups[instance_group_key(inst)];
      if (g.empty()) g.resize(T);
      ++g[t];
    }
  }
  auto top = [&](const auto& table) {
    using Key = typename std::decay_t<decltype(table)>::key_type;
    std::vector<std::pair<std::uint64_t, Key>> ranked;
    for (const auto& [key, counts] : table) {
      const auto lo = *std::min_element(counts.begin(), counts.end());
      if (lo > 0) ranked.emplace_back(lo, key);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<Key> out;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.push_back(ranked[i].second);
    return out;
  };
  return {top(feats), top(groups)};
}

}  // namespace ddp
