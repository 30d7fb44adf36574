// SPDX-License-Identifier: Apache-2.0
#pragma once

// One mini-batch iteration of the dual-loss update:
//   1. prior pass -> shat, bins (bins are constants for the rest of the step)
//   2. prior loss, whose gradient goes to the prior logits only
//   3. student (and teacher) forward on e' -> likelihood + output-distance loss
//   4. backward of the combined loss into embeddings, bin tables, interaction
// The optimizer steps are applied by the caller after both gradients exist.

#include <span>
#include <utility>
#include <vector>

#include "ddp/model.hpp"
#include "ddp/model_prior.hpp"

namespace ddp {

struct StepWorkspace {
  ForwardBuffers buf;
  ForwardCache cache;
  DenseMatrix dx;
  std::vector<Real> p;
  std::vector<Real> pt;
  std::vector<Real> dz;
  std::vector<int> y;
};

struct StepLosses {
  /// Mean per-instance prior loss (0 without a prior layer).
  double fp_loss = 0.0;
  LossBreakdown main;
};

namespace detail {

/// Shared forward: fills ws.p (and ws.pt when the prior term is active) and
/// returns the losses. `bins` overrides the prior's own discretization.
inline StepLosses forward_losses(CtrModel& model, const CtrModel* teacher,
                                 std::span<const EncodedInstance> batch, double lambda,
                                 StepWorkspace& ws, const std::uint32_t* frozen_bins, bool training) {
  const std::size_t n = batch.size();
  if (n == 0) fail(ErrorCode::EmptyBatch, "training step on an empty batch");
  ws.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) ws.y[i] = batch[i].label;

  StepLosses out;
  const std::uint32_t* bins = nullptr;
  if (model.has_prior()) {
    model.prior_forward(batch, ws.buf);
    const std::size_t m = model.num_fields();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      sum += fp_loss(std::span<const Real>(ws.buf.shat.data() + i * m, m), ws.y[i]);
    out.fp_loss = sum / static_cast<double>(n);
    bins = frozen_bins ? frozen_bins : ws.buf.bins.data();
  }

  if (training) {
    model.build_input(batch, bins, ws.buf, true);
  } else {
    std::as_const(model).build_input(batch, bins, ws.buf);
  }
  ws.buf.logits.resize(n);
  InteractionInput in{ws.buf.x.data.data(), n, batch, bins};
  model.interaction().forward(in, ws.buf.logits.data(), training ? &ws.cache : nullptr);
  ws.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) ws.p[i] = sigmoid(ws.buf.logits[i]);

  const bool use_prior_term = lambda > 0.0 && teacher != nullptr;
  double lp = 0.0;
  if (use_prior_term) {
    ws.pt.resize(n);
    teacher->predict(batch, ws.pt.data());
    lp = prior_loss(ws.p, ws.pt);
  }
  out.main = total_loss(likelihood_loss(ws.p, ws.y), lp, lambda);
  return out;
}

}  // namespace detail

/// Computes the step's losses and accumulates gradients into every slot:
/// the prior logits receive `phi_scale` times the sum over instances of the
/// per-instance prior loss gradient (phi_scale = 1 is one SGD step per
/// instance, as in a per-example loop); all other slots receive the gradient
/// of the batch-mean combined loss.
inline StepLosses compute_gradients(CtrModel& model, const CtrModel* teacher,
                                    std::span<const EncodedInstance> batch, double lambda,
                                    StepWorkspace& ws, const std::uint32_t* frozen_bins = nullptr,
                                    double phi_scale = 1.0) {
  StepLosses losses = detail::forward_losses(model, teacher, batch, lambda, ws, frozen_bins, true);
  const std::size_t n = batch.size();
  const std::uint32_t* bins = nullptr;
  if (model.has_prior()) {
    model.prior().accumulate_grad(batch, ws.buf.shat.data(), phi_scale);
    bins = frozen_bins ? frozen_bins : ws.buf.bins.data();
  }
  ws.dz.resize(n);
  const bool use_prior_term = lambda > 0.0 && teacher != nullptr;
  total_loss_logit_grad(ws.p, ws.y, use_prior_term ? ws.pt.data() : nullptr, lambda, ws.dz.data());

  const std::size_t width = model.input_width();
  if (ws.dx.rows != n || ws.dx.cols != width) ws.dx.resize(n, width);
  model.interaction().backward(ws.cache, ws.dz.data(), ws.dx.data.data());
  model.embedding().scatter_grad(ws.dx.data.data(), width, 0);
  if (model.has_prior()) {
    model.prior().scatter_grad(n, bins, ws.dx.data.data(), width,
                               model.num_fields() * model.embedding().dim());
  }
  return losses;
}

/// The scalar whose gradient compute_gradients produces: phi_scale times the
/// summed prior loss plus the batch-mean combined loss, with the prior bins
/// held at `frozen_bins`.
inline double objective_value(CtrModel& model, const CtrModel* teacher,
                              std::span<const EncodedInstance> batch, double lambda,
                              const std::uint32_t* frozen_bins, double phi_scale = 1.0) {
  StepWorkspace ws;
  const auto l = detail::forward_losses(model, teacher, batch, lambda, ws, frozen_bins, false);
  return phi_scale * l.fp_loss * static_cast<double>(batch.size()) + l.main.total;
}

}  // namespace ddp
