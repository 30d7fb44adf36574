// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddp/config.hpp"
#include "ddp/embedding.hpp"

namespace ddp {

/// Instances in arrival order, as parsed from a source.
struct InstanceStream {
  std::vector<EncodedInstance> instances;
  std::size_t skipped = 0;
};

/// D_1..D_T. periods[t-1] holds D_t.
struct PeriodStream {
  std::shared_ptr<const Schema> schema;
  std::vector<std::vector<EncodedInstance>> periods;

  std::size_t num_periods() const { return periods.size(); }
  std::size_t total_instances() const {
    std::size_t n = 0;
    for (const auto& p : periods) n += p.size();
    return n;
  }
};

struct CsvOptions {
  std::string label_column = "label";
  std::string period_column = "period";
  char multi_hot_separator = '|';
};

struct CsvScanReport {
  std::size_t rows = 0;
  std::size_t skipped = 0;
};

/// Streams a CSV file row by row and hands every well-formed encoded row to
/// `sink`. Only one line is buffered at a time. Malformed rows (wrong column
/// count, bad label/period, unencodable value) are counted and skipped.
template <typename Sink>
CsvScanReport scan_csv(const std::string& path, const Schema& schema, Sink&& sink,
                       const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::UnreadableFile, "cannot open " + path);
  CsvScanReport report;
  std::string line;
  if (!std::getline(in, line)) return report;  // zero-byte file: no rows
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  int label_col = -1, period_col = -1;
  std::vector<int> field_col(schema.num_fields(), -1);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    if (name == opts.label_column) {
      label_col = static_cast<int>(c);
    } else if (name == opts.period_column) {
      period_col = static_cast<int>(c);
    } else if (auto f = schema.field_index(name)) {
      field_col[*f] = static_cast<int>(c);
    } else {
      fail(ErrorCode::UnknownField, "column '" + name + "' is not in the schema");
    }
  }
  if (label_col < 0) fail(ErrorCode::MissingColumn, "label column '" + opts.label_column + "'");
  if (period_col < 0) fail(ErrorCode::MissingColumn, "period column '" + opts.period_column + "'");
  for (std::size_t f = 0; f < schema.num_fields(); ++f) {
    if (field_col[f] < 0) fail(ErrorCode::MissingColumn, "field column '" + schema.field(f).name + "'");
  }

  RawInstance raw;
  std::uint64_t row_id = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::uint64_t id = row_id++;
    const auto cells = split(line, ',');
    int label = -1;
    std::uint32_t period = 0;
    bool ok = cells.size() == header.size();
    if (ok) {
      ok = parse_number(cells[static_cast<std::size_t>(label_col)], label) && (label == 0 || label == 1);
      ok = ok && parse_number(cells[static_cast<std::size_t>(period_col)], period) && period >= 1;
    }
    if (ok) {
      raw.clear();
      for (std::size_t f = 0; f < schema.num_fields(); ++f) {
        auto& values = raw[schema.field(f).name];
        for (const auto& v : split(cells[static_cast<std::size_t>(field_col[f])], opts.multi_hot_separator)) {
          auto t = trim(v);
          if (!t.empty()) values.push_back(std::move(t));
        }
      }
      try {
        EncodedInstance inst = encode(raw, schema, label);
        inst.period = period;
        inst.id = id;
        sink(std::move(inst));
        ++report.rows;
        continue;
      } catch (const Error&) {
        // falls through to the skip count
      }
    }
    ++report.skipped;
  }
  return report;
}

inline InstanceStream ingest_csv(const std::string& path, const Schema& schema,
                                 const CsvOptions& opts = {}) {
  InstanceStream out;
  const auto report =
      scan_csv(path, schema, [&](EncodedInstance&& inst) { out.instances.push_back(std::move(inst)); }, opts);
  out.skipped = report.skipped;
  if (out.instances.empty()) fail(ErrorCode::EmptyStream, path + " has no valid rows");
  return out;
}

/// Stable partition by period tag into D_1..D_T.
inline PeriodStream split_periods(std::span<const EncodedInstance> stream, std::size_t T,
                                  std::shared_ptr<const Schema> schema = {}) {
  PeriodStream out;
  out.schema = std::move(schema);
  out.periods.resize(T);
  for (const auto& inst : stream) {
    if (inst.period < 1 || inst.period > T) {
      fail(ErrorCode::PeriodOutOfRange,
           "period " + std::to_string(inst.period) + " outside [1, " + std::to_string(T) + "]");
    }
    out.periods[inst.period - 1].push_back(inst);
  }
  return out;
}

inline void write_csv(const PeriodStream& stream, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::UnreadableFile, "cannot write " + path);
  const Schema& schema = *stream.schema;
  out << "label,period";
  for (const auto& f : schema.fields()) out << ',' << f.name;
  out << '\n';
  for (std::size_t t = 0; t < stream.periods.size(); ++t) {
    for (const auto& inst : stream.periods[t]) {
      out << inst.label << ',' << (t + 1);
      for (std::size_t f = 0; f < schema.num_fields(); ++f) {
        out << ',';
        const auto idx = inst.field(f);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          if (k) out << '|';
          out << (idx[k] - schema.field(f).offset);
        }
      }
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic drift streams

/// Additive-logit ground truth with exposure drift: the click probability of
/// an instance is sigmoid(bias + sum of per-value contributions), which never
/// changes; what changes at each drift period is how often each value is shown.
struct SynthConfig {
  std::size_t fields = 3;
  std::vector<std::size_t> vocab = {50};
  std::size_t periods = 7;
  std::size_t instances_per_period = 20000;
  /// Drives sampling of the data.
  std::uint64_t seed = 1;
  /// Drives contributions and exposure rankings.
  std::uint64_t truth_seed = 7;
  double bias = -2.0;
  double contrib_scale = 1.0;
  double zipf = 1.1;
  /// Periods (1-based) at which the exposure of drifting fields shifts.
  std::vector<std::size_t> drift_periods;
  /// Fraction of exposure mass moved to the new ranking at each shift.
  double drift_strength = 1.0;
  /// Fields whose exposure drifts; empty means every field.
  std::vector<std::size_t> drift_fields;
  std::size_t item_field = 0;
  /// Explicit per-field contributions / stationary exposures (override).
  std::map<std::size_t, std::vector<double>> contributions;
  std::map<std::size_t, std::vector<double>> exposure;

  std::size_t vocab_of(std::size_t f) const { return vocab.size() == 1 ? vocab[0] : vocab.at(f); }

  Schema schema() const {
    std::vector<FieldSpec> specs;
    for (std::size_t f = 0; f < fields; ++f) {
      FieldSpec s;
      s.name = "f" + std::to_string(f);
      s.vocab = vocab_of(f);
      s.encoding = FieldEncoding::Identity;
      specs.push_back(s);
    }
    return Schema(std::move(specs), "f" + std::to_string(item_field));
  }

  static SynthConfig parse(const KeyValueDoc& doc) {
    SynthConfig c;
    c.fields = doc.get<std::size_t>("synth.fields", c.fields);
    c.vocab = doc.get_list<std::size_t>("synth.vocab", c.vocab);
    c.periods = doc.get<std::size_t>("synth.periods", c.periods);
    c.instances_per_period = doc.get<std::size_t>("synth.instances_per_period", c.instances_per_period);
    c.seed = doc.get<std::uint64_t>("synth.seed", c.seed);
    c.truth_seed = doc.get<std::uint64_t>("synth.truth_seed", c.truth_seed);
    c.bias = doc.get<double>("synth.bias", c.bias);
    c.contrib_scale = doc.get<double>("synth.contrib_scale", c.contrib_scale);
    c.zipf = doc.get<double>("synth.zipf", c.zipf);
    c.drift_periods = doc.get_list<std::size_t>("synth.drift_periods", c.drift_periods);
    c.drift_strength = doc.get<double>("synth.drift_strength", c.drift_strength);
    c.drift_fields = doc.get_list<std::size_t>("synth.drift_fields", c.drift_fields);
    c.item_field = doc.get<std::size_t>("synth.item_field", c.item_field);
    for (std::size_t f = 0; f < c.fields; ++f) {
      const auto ck = "synth.contrib.f" + std::to_string(f);
      if (doc.has(ck)) c.contributions[f] = doc.get_list<double>(ck, {});
      const auto ek = "synth.exposure.f" + std::to_string(f);
      if (doc.has(ek)) c.exposure[f] = doc.get_list<double>(ek, {});
    }
    doc.reject_unknown([&](const std::string& key) {
      static const std::set<std::string> known = {
          "synth.fields", "synth.vocab", "synth.periods", "synth.instances_per_period",
          "synth.seed", "synth.truth_seed", "synth.bias", "synth.contrib_scale", "synth.zipf",
          "synth.drift_periods", "synth.drift_strength", "synth.drift_fields", "synth.item_field"};
      if (known.contains(key)) return true;
      for (std::size_t f = 0; f < c.fields; ++f) {
        if (key == "synth.contrib.f" + std::to_string(f) || key == "synth.exposure.f" + std::to_string(f))
          return true;
      }
      return false;
    });
    return c;
  }

  static SynthConfig load(const std::string& path) { return parse(KeyValueDoc::load(path)); }

  void validate() const {
    if (fields == 0) fail(ErrorCode::InvalidDistribution, "synth.fields must be > 0");
    if (vocab.size() != 1 && vocab.size() != fields)
      fail(ErrorCode::InvalidDistribution, "synth.vocab needs 1 or `fields` entries");
    if (periods == 0) fail(ErrorCode::InvalidDistribution, "synth.periods must be > 0");
    if (item_field >= fields) fail(ErrorCode::InvalidDistribution, "synth.item_field out of range");
    if (drift_strength < 0.0 || drift_strength > 1.0)
      fail(ErrorCode::InvalidDistribution, "synth.drift_strength must lie in [0, 1]");
    for (const auto& [f, values] : contributions) {
      if (values.size() != vocab_of(f))
        fail(ErrorCode::InvalidDistribution, "contributions of f" + std::to_string(f) + " must match vocab");
    }
    for (const auto& [f, probs] : exposure) {
      if (probs.size() != vocab_of(f))
        fail(ErrorCode::InvalidDistribution, "exposure of f" + std::to_string(f) + " must match vocab");
      double sum = 0.0;
      for (double p : probs) {
        if (!(p >= 0.0)) fail(ErrorCode::InvalidDistribution, "negative exposure probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        fail(ErrorCode::InvalidDistribution, "exposure of f" + std::to_string(f) + " does not sum to 1");
    }
  }
};

struct SynthTruth {
  double bias = 0.0;
  /// contributions[f][v]: true logit contribution of local value v of field f.
  std::vector<std::vector<double>> contributions;
  /// exposure[t][f][v] for period t (0-based).
  std::vector<std::vector<std::vector<double>>> exposure;
  /// True click probability of every generated instance, per period.
  std::vector<std::vector<double>> instance_p;

  /// Marginal CTR of value v of field f under period t's exposure.
  double value_ctr(std::size_t t, std::size_t f, std::size_t v) const;
};

struct SynthResult {
  PeriodStream stream;
  SynthTruth truth;
};

namespace detail {

inline std::vector<double> zipf_over(const std::vector<std::size_t>& ranking, double s) {
  std::vector<double> p(ranking.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    p[ranking[r]] = 1.0 / std::pow(static_cast<double>(r + 1), s);
    sum += p[ranking[r]];
  }
  for (auto& x : p) x /= sum;
  return p;
}

}  // namespace detail

inline SynthResult synth_drift(const SynthConfig& cfg) {
  cfg.validate();
  auto schema = std::make_shared<const Schema>(cfg.schema());
  std::mt19937_64 truth_rng(cfg.truth_seed);
  std::normal_distribution<double> normal(0.0, cfg.contrib_scale);

  SynthResult result;
  SynthTruth& truth = result.truth;
  truth.bias = cfg.bias;
  truth.contributions.resize(cfg.fields);
  std::vector<std::vector<std::size_t>> ranking(cfg.fields);
  for (std::size_t f = 0; f < cfg.fields; ++f) {
    const std::size_t V = cfg.vocab_of(f);
    auto& c = truth.contributions[f];
    if (auto it = cfg.contributions.find(f); it != cfg.contributions.end()) {
      c = it->second;
    } else {
      c.resize(V);
      for (auto& x : c) x = normal(truth_rng);
    }
    ranking[f].resize(V);
    std::iota(ranking[f].begin(), ranking[f].end(), std::size_t{0});
    std::shuffle(ranking[f].begin(), ranking[f].end(), truth_rng);
  }

  auto drifts = [&](std::size_t f) {
    return cfg.drift_fields.empty() ||
           std::find(cfg.drift_fields.begin(), cfg.drift_fields.end(), f) != cfg.drift_fields.end();
  };

  // Exposure per period: base Zipf over a random ranking, mixed towards a
  // fresh ranking at each drift period.
  std::vector<std::vector<double>> current(cfg.fields);
  for (std::size_t f = 0; f < cfg.fields; ++f) {
    if (auto it = cfg.exposure.find(f); it != cfg.exposure.end())
      current[f] = it->second;
    else
      current[f] = detail::zipf_over(ranking[f], cfg.zipf);
  }
  truth.exposure.resize(cfg.periods);
  for (std::size_t t = 1; t <= cfg.periods; ++t) {
    if (std::find(cfg.drift_periods.begin(), cfg.drift_periods.end(), t) != cfg.drift_periods.end()) {
      for (std::size_t f = 0; f < cfg.fields; ++f) {
        if (!drifts(f)) continue;
        auto next = ranking[f];
        std::shuffle(next.begin(), next.end(), truth_rng);
        const auto target = detail::zipf_over(next, cfg.zipf);
        for (std::size_t v = 0; v < target.size(); ++v)
          current[f][v] = (1.0 - cfg.drift_strength) * current[f][v] + cfg.drift_strength * target[v];
      }
    }
    truth.exposure[t - 1] = current;
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  result.stream.schema = schema;
  result.stream.periods.resize(cfg.periods);
  truth.instance_p.resize(cfg.periods);
  std::vector<std::uint32_t> local(cfg.fields);
  std::uint64_t next_id = 0;
  for (std::size_t t = 0; t < cfg.periods; ++t) {
    std::vector<std::discrete_distribution<std::uint32_t>> pick;
    for (std::size_t f = 0; f < cfg.fields; ++f)
      pick.emplace_back(truth.exposure[t][f].begin(), truth.exposure[t][f].end());
    auto& period = result.stream.periods[t];
    period.reserve(cfg.instances_per_period);
    truth.instance_p[t].reserve(cfg.instances_per_period);
    for (std::size_t i = 0; i < cfg.instances_per_period; ++i) {
      double z = cfg.bias;
      for (std::size_t f = 0; f < cfg.fields; ++f) {
        local[f] = pick[f](rng);
        z += truth.contributions[f][local[f]];
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      const int y = unit(rng) < p ? 1 : 0;
      EncodedInstance inst = make_instance(*schema, local, y);
      inst.period = static_cast<std::uint32_t>(t + 1);
      inst.id = next_id++;
      period.push_back(std::move(inst));
      truth.instance_p[t].push_back(p);
    }
  }
  return result;
}

inline double SynthTruth::value_ctr(std::size_t t, std::size_t f, std::size_t v) const {
  // E[sigmoid(bias + c_fv + sum of other fields)] under independent exposures,
  // by exact enumeration over the other fields (fine for small vocabularies).
  std::vector<std::pair<double, double>> dist = {{bias + contributions[f][v], 1.0}};
  for (std::size_t g = 0; g < contributions.size(); ++g) {
    if (g == f) continue;
    std::map<double, double> next;
    for (const auto& [z, w] : dist)
      for (std::size_t u = 0; u < contributions[g].size(); ++u)
        if (exposure[t][g][u] > 0) next[z + contributions[g][u]] += w * exposure[t][g][u];
    dist.assign(next.begin(), next.end());
  }
  double ctr = 0.0;
  for (const auto& [z, w] : dist) ctr += w / (1.0 + std::exp(-z));
  return ctr;
}

inline void write_truth_csv(const SynthTruth& truth, const Schema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::UnreadableFile, "cannot write " + path);
  out.precision(17);
  out << "field,value,contribution\n";
  out << "__bias__,0," << truth.bias << '\n';
  for (std::size_t f = 0; f < truth.contributions.size(); ++f)
    for (std::size_t v = 0; v < truth.contributions[f].size(); ++v)
      out << schema.field(f).name << ',' << v << ',' << truth.contributions[f][v] << '\n';
}

}  // namespace ddp
