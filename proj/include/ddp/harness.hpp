// SPDX-License-Identifier: Apache-2.0
#pragma once

// The incremental-update protocol: warm up on D_1..D_w, then for each later
// period snapshot the teacher and run the dual-optimizer step over D_t; the
// last period is only ever evaluated.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ddp/config.hpp"
#include "ddp/metrics.hpp"
#include "ddp/model.hpp"
#include "ddp/model_prior.hpp"
#include "ddp/optim.hpp"
#include "ddp/stream.hpp"
#include "ddp/train_step.hpp"

namespace ddp {

enum class BaselineMode { Plain, FpOnly, MpOnly, Ddp };

inline std::string to_string(BaselineMode m) {
  switch (m) {
    case BaselineMode::Plain: return "PLAIN";
    case BaselineMode::FpOnly: return "FP_ONLY";
    case BaselineMode::MpOnly: return "MP_ONLY";
    case BaselineMode::Ddp: return "DDP";
  }
  return "?";
}

inline BaselineMode parse_mode(const std::string& s) {
  if (s == "PLAIN") return BaselineMode::Plain;
  if (s == "FP_ONLY") return BaselineMode::FpOnly;
  if (s == "MP_ONLY") return BaselineMode::MpOnly;
  if (s == "DDP") return BaselineMode::Ddp;
  fail(ErrorCode::ConfigError, "unknown mode '" + s + "'");
}

enum class PhiOptimizer { Sgd, Adam };

struct RunConfig {
  std::size_t periods = 7;
  std::size_t warmup = 3;
  std::size_t batch_size = 1024;
  std::size_t epochs_per_period = 1;
  /// Unset means "default for the mode": 1.0 when the model prior is on.
  std::optional<double> lambda;
  std::size_t bins = 10;
  std::size_t embedding_dim = 16;
  InteractionKind interaction = InteractionKind::DeepFm;
  std::vector<std::size_t> hidden = {200, 200, 200};
  double adam_lr = 1e-3;
  double sgd_lr = 1e-3;
  PhiOptimizer phi_optimizer = PhiOptimizer::Sgd;
  double phi_adam_lr = 1e-3;
  /// "zero" or "global_ctr" (logit of the warm-up CTR).
  std::string prior_init = "zero";
  double l2 = 1e-6;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;
  BaselineMode mode = BaselineMode::Ddp;
  bool progressive = false;
  double head_fraction = 0.2;
  /// Test builds: track trained instance ids and refuse to evaluate on any.
  bool check_leakage = false;

  bool uses_prior() const { return mode == BaselineMode::FpOnly || mode == BaselineMode::Ddp; }
  bool uses_model_prior() const { return mode == BaselineMode::MpOnly || mode == BaselineMode::Ddp; }
  double effective_lambda() const { return uses_model_prior() ? lambda.value_or(1.0) : 0.0; }

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorCode::ConfigError, msg); };
    if (warmup < 1 || warmup >= periods) bad("need 1 <= warmup < periods");
    if (batch_size == 0) bad("batch_size must be > 0");
    if (epochs_per_period == 0) bad("epochs_per_period must be > 0");
    if (lambda && *lambda < 0.0) bad("lambda must be >= 0");
    if (lambda && *lambda != 0.0 && !uses_model_prior())
      bad("lambda is meaningless in mode " + to_string(mode));
    if (bins < 2) bad("bins must be >= 2");
    if (embedding_dim == 0) bad("embedding_dim must be > 0");
    for (auto h : hidden)
      if (h == 0) bad("hidden sizes must be > 0");
    if (!(adam_lr > 0) || !(sgd_lr > 0) || !(phi_adam_lr > 0)) bad("learning rates must be > 0");
    if (l2 < 0) bad("l2 must be >= 0");
    if (prior_init != "zero" && prior_init != "global_ctr") bad("prior_init must be zero|global_ctr");
    if (!(head_fraction > 0 && head_fraction < 1)) bad("head_fraction must lie in (0, 1)");
  }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "protocol.periods",   "protocol.warmup",       "protocol.progressive", "train.batch_size",
        "train.epochs_per_period", "train.seed",       "train.check_leakage",  "mp.lambda",
        "fp.bins",            "fp.sgd_lr",             "fp.optimizer",         "fp.adam_lr",
        "fp.init",            "model.interaction",     "model.embedding_dim",  "model.hidden",
        "optim.adam_lr",      "optim.l2",              "run.mode",             "run.checkpoint_dir",
        "eval.head_fraction"};
    return k;
  }

  /// Applies every key present in `doc` on top of the current values.
  void apply(const KeyValueDoc& doc) {
    doc.reject_unknown([](const std::string& key) {
      const auto& k = keys();
      return std::find(k.begin(), k.end(), key) != k.end();
    });
    periods = doc.get("protocol.periods", periods);
    warmup = doc.get("protocol.warmup", warmup);
    progressive = doc.get("protocol.progressive", progressive);
    batch_size = doc.get("train.batch_size", batch_size);
    epochs_per_period = doc.get("train.epochs_per_period", epochs_per_period);
    seed = doc.get("train.seed", seed);
    check_leakage = doc.get("train.check_leakage", check_leakage);
    if (doc.has("mp.lambda")) lambda = doc.require<double>("mp.lambda");
    bins = doc.get("fp.bins", bins);
    sgd_lr = doc.get("fp.sgd_lr", sgd_lr);
    if (doc.has("fp.optimizer")) {
      const auto v = doc.raw("fp.optimizer");
      if (v == "SGD") phi_optimizer = PhiOptimizer::Sgd;
      else if (v == "ADAM") phi_optimizer = PhiOptimizer::Adam;
      else fail(ErrorCode::ConfigError, "fp.optimizer must be SGD|ADAM");
    }
    phi_adam_lr = doc.get("fp.adam_lr", phi_adam_lr);
    prior_init = doc.get_string("fp.init", prior_init);
    if (doc.has("model.interaction")) interaction = parse_interaction_kind(doc.raw("model.interaction"));
    embedding_dim = doc.get("model.embedding_dim", embedding_dim);
    hidden = doc.get_list<std::size_t>("model.hidden", hidden);
    adam_lr = doc.get("optim.adam_lr", adam_lr);
    l2 = doc.get("optim.l2", l2);
    if (doc.has("run.mode")) mode = parse_mode(doc.raw("run.mode"));
    checkpoint_dir = doc.get_string("run.checkpoint_dir", checkpoint_dir);
    head_fraction = doc.get("eval.head_fraction", head_fraction);
  }

  static RunConfig from_doc(const KeyValueDoc& doc) {
    RunConfig c;
    c.apply(doc);
    return c;
  }

  KeyValueDoc to_doc() const {
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    KeyValueDoc d;
    d.set("protocol.periods", std::to_string(periods));
    d.set("protocol.warmup", std::to_string(warmup));
    d.set("protocol.progressive", progressive ? "true" : "false");
    d.set("train.batch_size", std::to_string(batch_size));
    d.set("train.epochs_per_period", std::to_string(epochs_per_period));
    d.set("train.seed", std::to_string(seed));
    d.set("train.check_leakage", check_leakage ? "true" : "false");
    if (lambda) d.set("mp.lambda", num(*lambda));
    d.set("fp.bins", std::to_string(bins));
    d.set("fp.sgd_lr", num(sgd_lr));
    d.set("fp.optimizer", phi_optimizer == PhiOptimizer::Sgd ? "SGD" : "ADAM");
    d.set("fp.adam_lr", num(phi_adam_lr));
    d.set("fp.init", prior_init);
    d.set("model.interaction", to_string(interaction));
    d.set("model.embedding_dim", std::to_string(embedding_dim));
    std::string h;
    for (auto x : hidden) h += (h.empty() ? "" : ",") + std::to_string(x);
    d.set("model.hidden", h);
    d.set("optim.adam_lr", num(adam_lr));
    d.set("optim.l2", num(l2));
    d.set("run.mode", to_string(mode));
    d.set("run.checkpoint_dir", checkpoint_dir);
    d.set("eval.head_fraction", num(head_fraction));
    return d;
  }

  ModelConfig model_config(double prior_init_logit = 0.0) const {
    ModelConfig m;
    m.embedding_dim = embedding_dim;
    m.bins = bins;
    m.feature_prior = uses_prior();
    m.interaction = interaction;
    m.hidden = hidden;
    m.prior_init_logit = prior_init_logit;
    return m;
  }
};

// ---------------------------------------------------------------------------
// Evaluation

struct SplitMetrics {
  std::string split;  // ALL, SHORT_HOT, LONG_TAIL
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n = 0;
};

struct PeriodReport {
  std::size_t period = 0;
  /// Incremental updates applied before this evaluation.
  std::size_t increments_before = 0;
  std::vector<SplitMetrics> splits;
  /// Mean training losses of the period that preceded this evaluation.
  double train_l_l = 0.0;
  double train_l_p = 0.0;

  const SplitMetrics* split(const std::string& name) const {
    for (const auto& s : splits)
      if (s.split == name) return &s;
    return nullptr;
  }
};

inline SplitMetrics score_split(const std::string& name, std::span<const double> scores,
                                std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<double> s;
  std::vector<int> y;
  s.reserve(rows.size());
  y.reserve(rows.size());
  for (auto r : rows) {
    s.push_back(scores[r]);
    y.push_back(labels[r]);
  }
  SplitMetrics m;
  m.split = name;
  m.n = rows.size();
  m.logloss = s.empty() ? std::nan("") : logloss(s, y);
  try {
    m.auc = auc(s, y);
  } catch (const Error&) {
    m.auc = std::nan("");
  }
  return m;
}

/// ALL plus (when item counts are given) SHORT_HOT / LONG_TAIL metrics of a
/// frozen model on `data`.
inline std::vector<SplitMetrics> evaluate_model(const CtrModel& model, std::span<const EncodedInstance> data,
                                                const ItemCounts* item_counts, double head_fraction) {
  if (data.empty()) fail(ErrorCode::EmptySet, "evaluation set is empty");
  const auto p = model.predict(data);
  std::vector<double> scores(p.begin(), p.end());
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i].label;
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<SplitMetrics> out;
  out.push_back(score_split("ALL", scores, labels, all));
  out.front().auc = auc(scores, labels);  // propagate DEGENERATE_LABELS for the full set
  if (item_counts) {
    const auto split = longtail_split(*item_counts, data, head_fraction);
    out.push_back(score_split("SHORT_HOT", scores, labels, split.short_hot));
    out.push_back(score_split("LONG_TAIL", scores, labels, split.long_tail));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

struct BatchLog {
  double fp_loss = 0.0;
  LossBreakdown loss;
};

struct PeriodLog {
  std::size_t period = 0;
  std::size_t instances = 0;
  std::size_t batches = 0;
  double mean_fp = 0.0;
  double mean_l_l = 0.0;
  double mean_l_p = 0.0;
  double mean_total = 0.0;
  std::vector<BatchLog> batch_logs;
};

/// Fixed-size Bloom filter over instance ids (leakage check in test builds).
class IdBloom {
 public:
  IdBloom() : bits_((std::size_t{1} << 26) / 64, 0) {}
  void insert(std::uint64_t id) {
    for (int k = 0; k < 4; ++k) set(hash(id, k));
  }
  bool maybe_contains(std::uint64_t id) const {
    for (int k = 0; k < 4; ++k)
      if (!get(hash(id, k))) return false;
    return true;
  }

 private:
  static std::size_t hash(std::uint64_t id, int k) {
    std::uint64_t x = id + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return static_cast<std::size_t>(x & ((std::uint64_t{1} << 26) - 1));
  }
  void set(std::size_t b) { bits_[b / 64] |= std::uint64_t{1} << (b % 64); }
  bool get(std::size_t b) const { return (bits_[b / 64] >> (b % 64)) & 1u; }
  std::vector<std::uint64_t> bits_;
};

class Trainer {
 public:
  Trainer(std::shared_ptr<const Schema> schema, const RunConfig& config, double prior_init_logit = 0.0)
      : config_(config), model_(std::move(schema), config.model_config(prior_init_logit), config.seed),
        rng_(config.seed ^ 0x5eedULL) {
    config_.validate();
    sgd_.lr = config_.sgd_lr;
    adam_.config.lr = config_.adam_lr;
    adam_.config.weight_decay = config_.l2;
    phi_adam_.config.lr = config_.phi_adam_lr;
    if (config_.check_leakage) bloom_.emplace();
  }

  const RunConfig& config() const { return config_; }
  CtrModel& model() { return model_; }
  const CtrModel& model() const { return model_; }
  const TeacherSnapshot& teacher() const { return teacher_; }
  /// Last completed period (0 before warm-up).
  std::size_t period() const { return period_; }
  const ItemCounts& item_counts() const { return item_counts_; }
  AdamState& adam() { return adam_; }
  AdamState& phi_adam() { return phi_adam_; }
  SgdState& sgd() { return sgd_; }
  std::mt19937_64& rng() { return rng_; }
  /// Keep every batch's losses in the period logs.
  void set_record_batches(bool on) { record_batches_ = on; }

  /// One Algorithm-1 iteration on a mini-batch.
  BatchLog train_batch(std::span<const EncodedInstance> batch, double lambda) {
    const CtrModel* teacher = lambda > 0.0 && teacher_.valid() ? &teacher_.model() : nullptr;
    const auto losses = compute_gradients(model_, teacher, batch, lambda, ws_);
    auto slots = model_.slots();
    route_and_step(slots, sgd_, adam_, config_.phi_optimizer == PhiOptimizer::Adam ? &phi_adam_ : nullptr);
    return {losses.fp_loss, losses.main};
  }

  /// Trains on the concatenation of D_1..D_w with the model prior off.
  PeriodLog warmup(std::span<const std::vector<EncodedInstance>> periods) {
    std::vector<EncodedInstance> joined;
    for (const auto& p : periods) joined.insert(joined.end(), p.begin(), p.end());
    if (joined.empty()) fail(ErrorCode::EmptyWarmup, "warm-up periods contain no instances");
    auto log = run_period(joined, 0.0);
    period_ = periods.size();
    log.period = period_;
    return log;
  }

  /// theta_{t-1} -> theta_t on D_t.
  PeriodLog incremental_update(std::span<const EncodedInstance> data) {
    if (period_ == 0) fail(ErrorCode::NoTeacher, "incremental_update before warm-up");
    const double lambda = config_.effective_lambda();
    if (lambda > 0.0) teacher_ = snapshot_teacher(model_, static_cast<int>(period_));
    auto log = run_period(data, lambda);
    ++period_;
    log.period = period_;
    return log;
  }

  std::vector<SplitMetrics> evaluate(std::span<const EncodedInstance> data, bool with_splits = true) const {
    if (bloom_) {
      for (const auto& inst : data) {
        if (bloom_->maybe_contains(inst.id))
          fail(ErrorCode::ConfigError, "leakage: evaluation instance " + std::to_string(inst.id) + " was trained on");
      }
    }
    const bool splits = with_splits && model_.schema().item_field().has_value();
    return evaluate_model(model_, data, splits ? &item_counts_ : nullptr, config_.head_fraction);
  }

  // Checkpoint access.
  void restore(std::size_t period, ItemCounts counts) {
    period_ = period;
    item_counts_ = std::move(counts);
  }

 private:
  PeriodLog run_period(std::span<const EncodedInstance> data, double lambda) {
    PeriodLog log;
    log.instances = data.size();
    const bool count_items = model_.schema().item_field().has_value();
    for (std::size_t epoch = 0; epoch < config_.epochs_per_period; ++epoch) {
      for (std::size_t start = 0; start < data.size(); start += config_.batch_size) {
        const auto batch = data.subspan(start, std::min(config_.batch_size, data.size() - start));
        const auto b = train_batch(batch, lambda);
        log.mean_fp += b.fp_loss;
        log.mean_l_l += b.loss.l_likelihood;
        log.mean_l_p += b.loss.l_prior;
        log.mean_total += b.loss.total;
        ++log.batches;
        if (record_batches_) log.batch_logs.push_back(b);
      }
    }
    for (const auto& inst : data) {
      if (count_items) ++item_counts_[inst.item_id];
      if (bloom_) bloom_->insert(inst.id);
    }
    if (log.batches) {
      const double inv = 1.0 / static_cast<double>(log.batches);
      log.mean_fp *= inv;
      log.mean_l_l *= inv;
      log.mean_l_p *= inv;
      log.mean_total *= inv;
    }
    return log;
  }

  RunConfig config_;
  CtrModel model_;
  TeacherSnapshot teacher_;
  SgdState sgd_;
  AdamState adam_;
  AdamState phi_adam_;
  std::mt19937_64 rng_;
  std::size_t period_ = 0;
  ItemCounts item_counts_;
  std::optional<IdBloom> bloom_;
  StepWorkspace ws_;
  bool record_batches_ = false;
};

inline double warmup_ctr(const PeriodStream& stream, std::size_t w) {
  double clicks = 0.0, shows = 0.0;
  for (std::size_t t = 0; t < w && t < stream.num_periods(); ++t) {
    for (const auto& inst : stream.periods[t]) clicks += inst.label;
    shows += static_cast<double>(stream.periods[t].size());
  }
  return shows > 0 ? clicks / shows : 0.5;
}

inline std::unique_ptr<Trainer> make_trainer(const PeriodStream& stream, const RunConfig& config) {
  double init = 0.0;
  if (config.prior_init == "global_ctr") {
    const double ctr = std::clamp(warmup_ctr(stream, config.warmup), 1e-4, 1.0 - 1e-4);
    init = std::log(ctr / (1.0 - ctr));
  }
  return std::make_unique<Trainer>(stream.schema, config, init);
}

// ---------------------------------------------------------------------------
// Protocol

struct ProtocolResult {
  /// Progressive reports (when enabled) then the final test-period report.
  std::vector<PeriodReport> reports;
  std::vector<PeriodLog> logs;

  const PeriodReport& final_report() const { return reports.back(); }
};

struct ProtocolOptions {
  /// Stop right after completing this period (0: run to the end).
  std::size_t stop_after = 0;
  /// Called after each completed training period.
  std::function<void(Trainer&)> on_period_end;
};

/// Continues the protocol from trainer.period() + 1 (warming up first when
/// the trainer is fresh).
inline ProtocolResult continue_protocol(Trainer& trainer, const PeriodStream& stream,
                                        const ProtocolOptions& opts = {}) {
  const RunConfig& cfg = trainer.config();
  const std::size_t T = cfg.periods, w = cfg.warmup;
  if (stream.num_periods() < T)
    fail(ErrorCode::InsufficientPeriods,
         "stream has " + std::to_string(stream.num_periods()) + " periods, need " + std::to_string(T));
  ProtocolResult result;
  if (trainer.period() == 0) {
    result.logs.push_back(trainer.warmup(std::span(stream.periods).subspan(0, w)));
    if (opts.on_period_end) opts.on_period_end(trainer);
    if (opts.stop_after == w) return result;
  }
  const PeriodLog* last = result.logs.empty() ? nullptr : &result.logs.back();
  for (std::size_t t = trainer.period() + 1; t < T; ++t) {
    if (cfg.progressive) {
      PeriodReport r;
      r.period = t;
      r.increments_before = t - 1 - w;
      r.splits = trainer.evaluate(stream.periods[t - 1], false);
      if (last) {
        r.train_l_l = last->mean_l_l;
        r.train_l_p = last->mean_l_p;
      }
      result.reports.push_back(std::move(r));
    }
    result.logs.push_back(trainer.incremental_update(stream.periods[t - 1]));
    last = &result.logs.back();
    if (opts.on_period_end) opts.on_period_end(trainer);
    if (opts.stop_after == t) return result;
  }
  PeriodReport final_report;
  final_report.period = T;
  final_report.increments_before = T - 1 - w;
  final_report.splits = trainer.evaluate(stream.periods[T - 1], true);
  if (last) {
    final_report.train_l_l = last->mean_l_l;
    final_report.train_l_p = last->mean_l_p;
  }
  result.reports.push_back(std::move(final_report));
  return result;
}

inline ProtocolResult run_protocol(const PeriodStream& stream, const RunConfig& config,
                                   const ProtocolOptions& opts = {}) {
  if (stream.num_periods() < config.periods)
    fail(ErrorCode::InsufficientPeriods, "stream shorter than protocol.periods");
  auto trainer = make_trainer(stream, config);
  return continue_protocol(*trainer, stream, opts);
}

inline void write_metrics_csv(const std::vector<PeriodReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::UnreadableFile, "cannot write " + path);
  out.precision(12);
  out << "period,split,auc,logloss,n_instances,train_l_l,train_l_p\n";
  for (const auto& r : reports)
    for (const auto& s : r.splits)
      out << r.period << ',' << s.split << ',' << s.auc << ',' << s.logloss << ',' << s.n << ','
          << r.train_l_l << ',' << r.train_l_p << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header, then little-endian binary records.

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "DDPCKPT";

namespace ckpt {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const DenseMatrix& m) {
    u64(m.rows);
    u64(m.cols);
    for (auto v : m.data) f64(static_cast<double>(v));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint64_t u64() {
    unsigned char b[8];
    if (!in_.read(reinterpret_cast<char*>(b), 8)) fail(ErrorCode::CorruptFile, "truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    if (n > (std::uint64_t{1} << 32)) fail(ErrorCode::CorruptFile, "implausible string length");
    std::string s(n, '\0');
    if (!in_.read(s.data(), static_cast<std::streamsize>(n))) fail(ErrorCode::CorruptFile, "truncated checkpoint");
    return s;
  }
  DenseMatrix matrix() {
    const auto r = u64(), c = u64();
    if (r * c > (std::uint64_t{1} << 34)) fail(ErrorCode::CorruptFile, "implausible matrix size");
    DenseMatrix m(r, c);
    for (auto& v : m.data) v = static_cast<Real>(f64());
    return m;
  }

 private:
  std::istream& in_;
};

inline void write_adam(Writer& w, const AdamState& a) {
  w.f64(a.config.lr);
  w.f64(a.config.beta1);
  w.f64(a.config.beta2);
  w.f64(a.config.eps);
  w.f64(a.config.weight_decay);
  w.u64(a.slots.size());
  for (const auto& [name, mm] : a.slots) {
    w.str(name);
    w.matrix(mm.m);
    w.matrix(mm.v);
    w.u64(mm.steps.size());
    for (auto s : mm.steps) w.u64(s);
  }
}

inline void read_adam(Reader& r, AdamState& a) {
  a.config.lr = r.f64();
  a.config.beta1 = r.f64();
  a.config.beta2 = r.f64();
  a.config.eps = r.f64();
  a.config.weight_decay = r.f64();
  const auto n = r.u64();
  a.slots.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = r.str();
    AdamMoments mm;
    mm.m = r.matrix();
    mm.v = r.matrix();
    mm.steps.resize(r.u64());
    for (auto& s : mm.steps) s = r.u64();
    a.slots[name] = std::move(mm);
  }
}

}  // namespace ckpt

inline void save_checkpoint(Trainer& trainer, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::UnreadableFile, "cannot write " + path);
  const Schema& schema = trainer.model().schema();
  out << kCheckpointMagic << '\n';
  out << "format_version = " << kCheckpointVersion << '\n';
  out << "schema_digest = " << schema.digest() << '\n';
  out << "period = " << trainer.period() << '\n';
  out << "real_bits = " << sizeof(Real) * 8 << '\n';
  out << "[config]\n" << trainer.config().to_doc().serialize();
  out << "[schema]\n" << schema.serialize();
  out << "END_HEADER\n";

  ckpt::Writer w(out);
  auto slots = trainer.model().slots();
  w.u64(slots.size());
  for (const auto* s : slots) {
    w.str(s->name);
    w.matrix(s->values);
  }
  w.f64(trainer.sgd().lr);
  ckpt::write_adam(w, trainer.adam());
  ckpt::write_adam(w, trainer.phi_adam());
  std::ostringstream rng;
  rng << trainer.rng();
  w.str(rng.str());
  w.u64(trainer.item_counts().size());
  for (const auto& [item, count] : trainer.item_counts()) {
    w.u64(item);
    w.u64(count);
  }
  if (!out) fail(ErrorCode::UnreadableFile, "write failed for " + path);
}

struct CheckpointHeader {
  int version = 0;
  std::string schema_digest;
  std::size_t period = 0;
  KeyValueDoc config;
  std::string schema_text;
};

namespace ckpt {

inline CheckpointHeader read_header(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) fail(ErrorCode::CorruptFile, path + ": bad magic");
  CheckpointHeader h;
  std::string section, config_text, meta_text;
  bool done = false;
  while (std::getline(in, line)) {
    if (line == "END_HEADER") {
      done = true;
      break;
    }
    if (line == "[config]" || line == "[schema]") {
      section = line;
      continue;
    }
    if (section == "[config]") config_text += line + '\n';
    else if (section == "[schema]") h.schema_text += line + '\n';
    else meta_text += line + '\n';
  }
  if (!done) fail(ErrorCode::CorruptFile, path + ": header not terminated");
  try {
    const auto meta = KeyValueDoc::parse(meta_text, path);
    h.version = meta.require<int>("format_version");
    h.schema_digest = meta.require<std::string>("schema_digest");
    h.period = meta.require<std::size_t>("period");
    h.config = KeyValueDoc::parse(config_text, path);
  } catch (const Error& e) {
    fail(ErrorCode::CorruptFile, std::string(path) + ": " + e.what());
  }
  return h;
}

}  // namespace ckpt

/// Restores a trainer. When `expected` is given its digest must match the
/// checkpoint's; otherwise the embedded schema is used.
inline std::unique_ptr<Trainer> load_checkpoint(const std::string& path,
                                                std::shared_ptr<const Schema> expected = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::UnreadableFile, "cannot open " + path);
  const auto header = ckpt::read_header(in, path);
  if (header.version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(header.version) +
                                         ", expected " + std::to_string(kCheckpointVersion));
  }
  std::shared_ptr<const Schema> schema = expected;
  if (schema) {
    if (schema->digest() != header.schema_digest)
      fail(ErrorCode::SchemaDigestMismatch, "checkpoint was written for schema " + header.schema_digest);
  } else {
    schema = std::make_shared<const Schema>(Schema::parse(KeyValueDoc::parse(header.schema_text, path)));
    if (schema->digest() != header.schema_digest)
      fail(ErrorCode::CorruptFile, "embedded schema does not match its digest");
  }
  const RunConfig config = RunConfig::from_doc(header.config);
  auto trainer = std::make_unique<Trainer>(schema, config);

  ckpt::Reader r(in);
  const auto nslots = r.u64();
  auto slots = trainer->model().slots();
  if (nslots != slots.size()) fail(ErrorCode::CorruptFile, "slot count differs from configuration");
  for (auto* s : slots) {
    const auto name = r.str();
    if (name != s->name) fail(ErrorCode::CorruptFile, "expected slot " + s->name + ", found " + name);
    auto values = r.matrix();
    if (values.rows != s->rows() || values.cols != s->cols())
      fail(ErrorCode::CorruptFile, "shape mismatch in slot " + name);
    s->values = std::move(values);
  }
  trainer->sgd().lr = r.f64();
  ckpt::read_adam(r, trainer->adam());
  ckpt::read_adam(r, trainer->phi_adam());
  std::istringstream rng(r.str());
  rng >> trainer->rng();
  ItemCounts counts;
  const auto nitems = r.u64();
  for (std::uint64_t i = 0; i < nitems; ++i) {
    const auto item = static_cast<std::uint32_t>(r.u64());
    counts[item] = r.u64();
  }
  trainer->restore(header.period, std::move(counts));
  return trainer;
}

}  // namespace ddp
