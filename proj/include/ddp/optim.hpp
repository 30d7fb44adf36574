// SPDX-License-Identifier: Apache-2.0
#pragma once

// Plain SGD for the feature-prior logits and lazy sparse Adam for every
// other slot. Sparse slots only visit rows touched in the current batch;
// Adam keeps a separate bias-correction step count per such row.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ddp/nn_core.hpp"

namespace ddp {

struct SgdState {
  double lr = 1e-3;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 coefficient added to the gradient of visited coordinates.
  double weight_decay = 0.0;
};

struct AdamMoments {
  DenseMatrix m;
  DenseMatrix v;
  /// One counter per row for sparse slots, a single counter for dense ones.
  std::vector<std::uint64_t> steps;
};

struct AdamState {
  AdamConfig config;
  std::map<std::string, AdamMoments> slots;

  AdamMoments& moments_for(const ParamSlot& slot) {
    auto& mm = slots[slot.name];
    if (mm.m.rows != slot.rows() || mm.m.cols != slot.cols()) {
      mm.m.resize(slot.rows(), slot.cols());
      mm.v.resize(slot.rows(), slot.cols());
      mm.steps.assign(slot.sparse ? slot.rows() : 1, 0);
    }
    return mm;
  }
};

inline void require_finite_grad(const ParamSlot& slot) {
  bool ok = true;
  slot.for_each_active_row([&](std::size_t r) {
    for (auto g : slot.grad.row(r)) ok = ok && std::isfinite(g);
  });
  if (!ok) fail(ErrorCode::NonFiniteGrad, "slot " + slot.name);
}

/// p <- p - lr * g on the active rows.
inline void sgd_step(ParamSlot& slot, const SgdState& state) {
  require_finite_grad(slot);
  const Real lr = static_cast<Real>(state.lr);
  slot.for_each_active_row([&](std::size_t r) {
    auto p = slot.values.row(r);
    auto g = slot.grad.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] -= lr * g[c];
  });
}

/// Bias-corrected Adam on the active rows of one slot.
inline void adam_step(ParamSlot& slot, AdamState& state) {
  require_finite_grad(slot);
  const AdamConfig& cfg = state.config;
  AdamMoments& mm = state.moments_for(slot);
  auto update_row = [&](std::size_t r, std::uint64_t step) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    auto p = slot.values.row(r);
    auto g = slot.grad.row(r);
    auto m = mm.m.row(r);
    auto v = mm.v.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) {
      const double grad = static_cast<double>(g[c]) + cfg.weight_decay * p[c];
      const double mc = cfg.beta1 * m[c] + (1.0 - cfg.beta1) * grad;
      const double vc = cfg.beta2 * v[c] + (1.0 - cfg.beta2) * grad * grad;
      m[c] = static_cast<Real>(mc);
      v[c] = static_cast<Real>(vc);
      const double mhat = mc / c1;
      const double vhat = vc / c2;
      p[c] = static_cast<Real>(p[c] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  };
  if (slot.sparse) {
    for (auto r : slot.touched_rows()) update_row(r, ++mm.steps[r]);
  } else {
    const std::uint64_t step = ++mm.steps[0];
    for (std::size_t r = 0; r < slot.rows(); ++r) update_row(r, step);
  }
}

/// Applies one optimizer step to every slot according to its group: SGD
/// group -> `sgd` (or `phi_adam` when given, for the Adam-on-prior ablation),
/// Adam group -> `adam`. Gradients are cleared afterwards.
inline void route_and_step(std::span<ParamSlot* const> slots, const SgdState& sgd, AdamState& adam,
                           AdamState* phi_adam = nullptr) {
  for (auto* s : slots) {
    if (s->group == UpdateGroup::Untagged) fail(ErrorCode::UntaggedSlot, "slot " + s->name);
  }
  for (auto* s : slots) {
    if (s->group == UpdateGroup::Sgd) {
      if (phi_adam)
        adam_step(*s, *phi_adam);
      else
        sgd_step(*s, sgd);
    } else {
      adam_step(*s, adam);
    }
  }
  for (auto* s : slots) s->clear_grad();
}

}  // namespace ddp
