// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end gradient check of the training objective on a small random
// model: prior loss (summed over instances) + likelihood + output distance to
// a differing teacher.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ddp/model.hpp"
#include "ddp/model_prior.hpp"
#include "ddp/train_step.hpp"

namespace ddp {

struct ModelGradCheckConfig {
  InteractionKind kind = InteractionKind::DeepFm;
  std::size_t dim = 4;
  std::vector<std::size_t> hidden = {8, 8};
  std::size_t batch = 64;
  std::size_t bins = 5;
  bool feature_prior = true;
  double lambda = 1.0;
  std::uint64_t seed = 11;
  /// Debug aid: doubles the analytic gradient of this slot before checking.
  std::string corrupt_slot;
  GradCheckOptions options;
};

/// Three one-hot fields and one multi-hot field; the first is the item field.
inline std::shared_ptr<const Schema> grad_check_schema() {
  std::vector<FieldSpec> f = {{"item", 12, false, FieldEncoding::Identity, 0},
                              {"ctx", 9, false, FieldEncoding::Identity, 0},
                              {"user", 15, false, FieldEncoding::Identity, 0},
                              {"tags", 10, true, FieldEncoding::Identity, 0}};
  return std::make_shared<const Schema>(std::move(f), std::string("item"));
}

inline std::vector<EncodedInstance> random_instances(const Schema& schema, std::size_t n, std::mt19937_64& rng) {
  std::vector<EncodedInstance> out;
  out.reserve(n);
  std::bernoulli_distribution coin(0.35);
  for (std::size_t i = 0; i < n; ++i) {
    EncodedInstance inst;
    for (const auto& spec : schema.fields()) {
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(spec.vocab - 1));
      const std::size_t count = spec.multi_hot ? 1 + rng() % 3 : 1;
      std::vector<std::uint32_t> seen;
      while (seen.size() < count) {
        const auto v = pick(rng);
        if (std::find(seen.begin(), seen.end(), v) == seen.end()) seen.push_back(v);
      }
      for (auto v : seen) inst.indices.push_back(static_cast<std::uint32_t>(spec.offset + v));
      inst.field_end.push_back(static_cast<std::uint32_t>(inst.indices.size()));
    }
    inst.label = coin(rng) ? 1 : 0;
    if (auto item = schema.item_field()) inst.item_id = inst.field(*item).front();
    inst.id = i;
    out.push_back(std::move(inst));
  }
  return out;
}

/// Spreads every parameter over a wider range than the training init so all
/// gradients are well above finite-difference round-off.
inline void randomize_for_check(CtrModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* s : model.slots()) {
    if (s->group == UpdateGroup::Sgd)
      fill_uniform(s->values, -1.5, 1.5, rng);
    else
      fill_uniform(s->values, -0.5, 0.5, rng);
  }
}

struct ModelGradCheckReport {
  GradCheckResult result;
  std::string kind;
};

inline ModelGradCheckReport model_grad_check(const ModelGradCheckConfig& cfg) {
  auto schema = grad_check_schema();
  ModelConfig mc;
  mc.embedding_dim = cfg.dim;
  mc.bins = cfg.bins;
  mc.feature_prior = cfg.feature_prior;
  mc.interaction = cfg.kind;
  mc.hidden = cfg.hidden;
  CtrModel student(schema, mc, cfg.seed);
  CtrModel teacher_state(schema, mc, cfg.seed + 1);
  randomize_for_check(student, cfg.seed + 2);
  randomize_for_check(teacher_state, cfg.seed + 3);
  const auto teacher = snapshot_teacher(teacher_state, 0);

  std::mt19937_64 rng(cfg.seed + 4);
  const auto batch = random_instances(*schema, cfg.batch, rng);

  // Bins are constants within a step; freeze them at the unperturbed values.
  ForwardBuffers probe;
  student.prior_forward(batch, probe);
  const std::vector<std::uint32_t> bins = probe.bins;
  const std::uint32_t* frozen = student.has_prior() ? bins.data() : nullptr;

  // The summed prior term is checked at mean scale: at sum scale its
  // magnitude (~n) would swamp the round-off budget of the small gradients.
  const double phi_scale = 1.0 / static_cast<double>(batch.size());
  StepWorkspace ws;
  auto slots = student.slots();
  auto compute = [&] {
    for (auto* s : slots) {
      s->clear_grad();
      s->grad.set_zero();
    }
    compute_gradients(student, &teacher.model(), batch, cfg.lambda, ws, frozen, phi_scale);
    if (!cfg.corrupt_slot.empty()) {
      auto* s = student.find_slot(cfg.corrupt_slot);
      if (!s) fail(ErrorCode::ConfigError, "no slot named '" + cfg.corrupt_slot + "'");
      for (auto& g : s->grad.data) g *= Real(2);
    }
  };
  auto loss = [&] { return objective_value(student, &teacher.model(), batch, cfg.lambda, frozen, phi_scale); };
  ModelGradCheckReport report;
  report.kind = to_string(cfg.kind);
  report.result = grad_check(slots, loss, compute, cfg.options);
  return report;
}

}  // namespace ddp
