// SPDX-License-Identifier: Apache-2.0
// ddp_cli: train / eval / synth / kl-diag / grad-check.
//
// Exit codes: 0 success, 1 runtime failure (any library error, or a failing
// gradient check), 2 configuration or command-line error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ddp/ddp.hpp"

#ifndef DDP_PRESET_DIR
#define DDP_PRESET_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace ddp;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

/// A path, or the name of a file in the preset directory.
std::string resolve_config(const std::string& name) {
  if (fs::exists(name)) return name;
  const fs::path preset = fs::path(DDP_PRESET_DIR) / (name + ".conf");
  if (fs::exists(preset)) return preset.string();
  fail(ErrorCode::ConfigError, "no config file or preset named '" + name + "'");
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out = "ddp_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> lambda;
  std::optional<std::string> data;
  std::optional<std::string> schema;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_model_flags) {
  cmd->add_option("-c,--config", f.config, "config file or preset name (synth_small, drift, stationary)");
  cmd->add_option("--set", f.sets, "override: dotted.key=value (repeatable)");
  cmd->add_option("-o,--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "training seed");
  cmd->add_option("--data", f.data, "CSV data file (needs --schema)");
  cmd->add_option("--schema", f.schema, "schema file for --data");
  if (with_model_flags) {
    cmd->add_option("--mode", f.mode, "PLAIN | FP_ONLY | MP_ONLY | DDP");
    cmd->add_option("--lambda", f.lambda, "model-prior weight");
  }
}

/// File values first, then --set, then dedicated flags.
KeyValueDoc build_doc(const CommonFlags& f) {
  KeyValueDoc doc;
  if (!f.config.empty()) doc = KeyValueDoc::load(resolve_config(f.config));
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ConfigError, "--set expects key=value, got '" + s + "'");
    doc.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (f.seed) doc.set("train.seed", std::to_string(*f.seed));
  if (f.mode) doc.set("run.mode", *f.mode);
  if (f.lambda) {
    std::ostringstream os;
    os.precision(17);
    os << *f.lambda;
    doc.set("mp.lambda", os.str());
  }
  if (f.data) doc.set("data.path", *f.data);
  if (f.schema) doc.set("data.schema", *f.schema);
  return doc;
}

void print_report(const PeriodReport& r) {
  for (const auto& s : r.splits)
    std::printf("period %zu %-9s auc %.6f logloss %.6f n %zu\n", r.period, s.split.c_str(), s.auc, s.logloss, s.n);
}

int cmd_train(const CommonFlags& f) {
  const auto exp = ExperimentConfig::from_doc(build_doc(f));
  auto loaded = load_stream(exp);
  fs::create_directories(f.out);
  const std::string ckpt_path = (fs::path(f.out) / "checkpoint.bin").string();

  RunConfig rc = exp.run;
  ProtocolOptions opts;
  if (!rc.checkpoint_dir.empty()) {
    fs::create_directories(rc.checkpoint_dir);
    opts.on_period_end = [&](Trainer& t) {
      save_checkpoint(t, (fs::path(rc.checkpoint_dir) / ("period_" + std::to_string(t.period()) + ".bin")).string());
    };
  }
  auto trainer = make_trainer(loaded.stream, rc);
  const auto result = continue_protocol(*trainer, loaded.stream, opts);
  save_checkpoint(*trainer, ckpt_path);
  write_metrics_csv(result.reports, (fs::path(f.out) / "metrics.csv").string());

  std::ofstream manifest(fs::path(f.out) / "manifest.txt");
  manifest << "# ddp_cli train\n";
  manifest << "input_digest = " << loaded.input_digest << '\n';
  manifest << "schema_digest = " << loaded.stream.schema->digest() << '\n';
  manifest << "skipped_rows = " << loaded.skipped << '\n';
  manifest << exp.to_doc().serialize();

  for (const auto& r : result.reports) print_report(r);
  std::printf("wrote %s\n", f.out.c_str());
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, std::size_t period) {
  const KeyValueDoc doc = build_doc(f);
  auto trainer = load_checkpoint(checkpoint);
  if (doc.keys().empty()) fail(ErrorCode::ConfigError, "eval needs --config or --data to locate the stream");
  const auto exp = ExperimentConfig::from_doc(doc);
  const std::size_t t = period ? period : exp.run.periods;

  std::vector<EncodedInstance> data;
  if (exp.uses_csv()) {
    const auto schema = Schema::load(exp.schema_path);
    if (schema.digest() != trainer->model().schema().digest())
      fail(ErrorCode::SchemaDigestMismatch, "data schema differs from the checkpoint's");
    scan_csv(exp.data_path, schema, [&](EncodedInstance&& inst) {
      if (inst.period == t) data.push_back(std::move(inst));
    });
  } else {
    auto loaded = load_stream(exp);
    if (loaded.stream.schema->digest() != trainer->model().schema().digest())
      fail(ErrorCode::SchemaDigestMismatch, "data schema differs from the checkpoint's");
    if (t < 1 || t > loaded.stream.num_periods()) fail(ErrorCode::PeriodOutOfRange, "period " + std::to_string(t));
    data = std::move(loaded.stream.periods[t - 1]);
  }
  if (data.empty()) fail(ErrorCode::EmptySet, "no instances for period " + std::to_string(t));

  PeriodReport r;
  r.period = t;
  r.splits = trainer->evaluate(data, true);
  fs::create_directories(f.out);
  write_metrics_csv({r}, (fs::path(f.out) / "eval.csv").string());
  print_report(r);
  return 0;
}

int cmd_synth(const CommonFlags& f) {
  const auto exp = ExperimentConfig::from_doc(build_doc(f));
  const auto r = synth_drift(exp.synth);
  fs::create_directories(f.out);
  write_csv(r.stream, (fs::path(f.out) / "data.csv").string());
  write_truth_csv(r.truth, *r.stream.schema, (fs::path(f.out) / "truth.csv").string());
  std::ofstream(fs::path(f.out) / "schema.conf") << r.stream.schema->serialize();
  std::printf("%zu periods x %zu instances -> %s\n", r.stream.num_periods(), exp.synth.instances_per_period,
              f.out.c_str());
  return 0;
}

int cmd_kl(const CommonFlags& f, std::size_t top) {
  const auto exp = ExperimentConfig::from_doc(build_doc(f));
  const auto loaded = load_stream(exp);
  const auto rep = kl_report(loaded.stream, select_kl_keys(loaded.stream, top));
  fs::create_directories(f.out);
  rep.write_csv((fs::path(f.out) / "kl.csv").string());
  for (const auto& w : rep.warnings) std::fprintf(stderr, "%s\n", w.c_str());
  std::printf("mean KL feature %.6g instance_group %.6g\n", rep.mean(Granularity::Feature),
              rep.mean(Granularity::InstanceGroup));
  return 0;
}

int cmd_grad_check(const std::string& kind, std::uint64_t seed, const std::string& corrupt, double tol) {
  std::vector<InteractionKind> kinds;
  if (kind == "both") kinds = {InteractionKind::Dnn, InteractionKind::DeepFm};
  else kinds = {parse_interaction_kind(kind)};
  bool ok = true;
  for (auto k : kinds) {
    ModelGradCheckConfig cfg;
    cfg.kind = k;
    cfg.seed = seed;
    cfg.corrupt_slot = corrupt;
    const auto rep = model_grad_check(cfg);
    for (const auto& [slot, err] : rep.result.per_slot) std::printf("  %-26s %.3e\n", slot.c_str(), err);
    const bool pass = rep.result.max_rel_error <= tol;
    ok = ok && pass;
    std::printf("%s %s max_rel_error %.3e over %zu coords", pass ? "PASS" : "FAIL", rep.kind.c_str(),
                rep.result.max_rel_error, rep.result.coords_checked);
    if (!pass) std::printf(" worst slot %s", rep.result.worst_slot.c_str());
    std::printf("\n");
  }
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental CTR training with feature and model priors"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, synth_f, kl_f;
  auto* train = app.add_subcommand("train", "run the warm-up + incremental protocol");
  add_common(train, train_f, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one period");
  add_common(eval, eval_f, false);
  std::string checkpoint;
  std::size_t period = 0;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--period", period, "period to evaluate (default: the last)");

  auto* synth = app.add_subcommand("synth", "write a synthetic drift stream as CSV");
  add_common(synth, synth_f, false);

  auto* kl = app.add_subcommand("kl-diag", "per-period KL of feature vs instance-group CTRs");
  add_common(kl, kl_f, false);
  std::size_t top = 10;
  kl->add_option("--top", top, "number of features and instance groups to track");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full training objective");
  std::string kind = "both", corrupt;
  std::uint64_t gc_seed = 11;
  double tol = 1e-4;
  gc->add_option("--kind", kind, "DNN | DEEPFM | both");
  gc->add_option("--seed", gc_seed, "seed of the random model and batch");
  gc->add_option("--corrupt-slot", corrupt, "debug: double this slot's analytic gradient");
  gc->add_option("--tol", tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(train_f);
    if (eval->parsed()) return cmd_eval(eval_f, checkpoint, period);
    if (synth->parsed()) return cmd_synth(synth_f);
    if (kl->parsed()) return cmd_kl(kl_f, top);
    if (gc->parsed()) return cmd_grad_check(kind, gc_seed, corrupt, tol);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == ErrorCode::ConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
