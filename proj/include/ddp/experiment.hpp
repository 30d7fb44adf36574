// SPDX-License-Identifier: Apache-2.0
#pragma once

// One flat key-value document describing a whole run: the protocol keys of
// RunConfig, plus either `synth.*` keys (generated stream) or `data.*` keys
// (CSV file and schema file).

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "ddp/harness.hpp"
#include "ddp/stream.hpp"

namespace ddp {

struct ExperimentConfig {
  RunConfig run;
  SynthConfig synth;
  std::string data_path;
  std::string schema_path;

  bool uses_csv() const { return !data_path.empty(); }

  static ExperimentConfig from_doc(const KeyValueDoc& doc) {
    KeyValueDoc run_doc, synth_doc;
    ExperimentConfig e;
    for (const auto& key : doc.keys()) {
      if (key.starts_with("synth.")) {
        synth_doc.set(key, doc.raw(key));
      } else if (key == "data.path") {
        e.data_path = doc.raw(key);
      } else if (key == "data.schema") {
        e.schema_path = doc.raw(key);
      } else {
        run_doc.set(key, doc.raw(key));
      }
    }
    e.run.apply(run_doc);
    e.synth = SynthConfig::parse(synth_doc);
    // The generated stream follows the protocol length unless told otherwise.
    if (!synth_doc.has("synth.periods")) e.synth.periods = e.run.periods;
    if (e.uses_csv() && e.schema_path.empty())
      fail(ErrorCode::ConfigError, "data.path needs data.schema");
    e.run.validate();
    return e;
  }

  KeyValueDoc to_doc() const {
    KeyValueDoc d = run.to_doc();
    if (uses_csv()) {
      d.set("data.path", data_path);
      d.set("data.schema", schema_path);
    } else {
      const auto s = synth_to_doc(synth);
      for (const auto& k : s.keys()) d.set(k, s.raw(k));
    }
    return d;
  }

  static std::string join(const auto& values) {
    std::ostringstream os;
    os.precision(17);
    bool first = true;
    for (const auto& v : values) {
      if (!first) os << ',';
      os << v;
      first = false;
    }
    return os.str();
  }

  static KeyValueDoc synth_to_doc(const SynthConfig& c) {
    KeyValueDoc d;
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    d.set("synth.fields", std::to_string(c.fields));
    d.set("synth.vocab", join(c.vocab));
    d.set("synth.periods", std::to_string(c.periods));
    d.set("synth.instances_per_period", std::to_string(c.instances_per_period));
    d.set("synth.seed", std::to_string(c.seed));
    d.set("synth.truth_seed", std::to_string(c.truth_seed));
    d.set("synth.bias", num(c.bias));
    d.set("synth.contrib_scale", num(c.contrib_scale));
    d.set("synth.zipf", num(c.zipf));
    d.set("synth.drift_periods", join(c.drift_periods));
    d.set("synth.drift_strength", num(c.drift_strength));
    d.set("synth.drift_fields", join(c.drift_fields));
    d.set("synth.item_field", std::to_string(c.item_field));
    for (const auto& [f, v] : c.contributions) d.set("synth.contrib.f" + std::to_string(f), join(v));
    for (const auto& [f, v] : c.exposure) d.set("synth.exposure.f" + std::to_string(f), join(v));
    return d;
  }
};

/// The period stream of an experiment, plus a digest of its inputs.
struct LoadedStream {
  PeriodStream stream;
  std::optional<SynthTruth> truth;
  std::size_t skipped = 0;
  std::string input_digest;
};

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::UnreadableFile, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

inline LoadedStream load_stream(const ExperimentConfig& e) {
  LoadedStream out;
  if (e.uses_csv()) {
    auto schema = std::make_shared<const Schema>(Schema::load(e.schema_path));
    auto raw = ingest_csv(e.data_path, *schema);
    out.skipped = raw.skipped;
    out.stream = split_periods(raw.instances, e.run.periods, schema);
    out.input_digest = hex64(fnv1a64(file_digest(e.data_path) + file_digest(e.schema_path)));
  } else {
    auto r = synth_drift(e.synth);
    out.stream = std::move(r.stream);
    out.truth = std::move(r.truth);
    out.input_digest = hex64(fnv1a64(ExperimentConfig::synth_to_doc(e.synth).serialize()));
  }
  return out;
}

}  // namespace ddp
