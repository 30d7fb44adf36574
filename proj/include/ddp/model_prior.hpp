// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model prior: a frozen copy of the previous period's model and the
// likelihood + output-distance losses that anchor the incremental update.

#include <memory>
#include <span>

#include "ddp/model.hpp"
#include "ddp/nn_core.hpp"

namespace ddp {

struct LossBreakdown {
  double l_likelihood = 0.0;
  double l_prior = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

/// Mean clamped BCE over the batch.
inline double likelihood_loss(std::span<const Real> p, std::span<const int> y) {
  if (p.empty()) fail(ErrorCode::EmptyBatch, "likelihood_loss on an empty batch");
  if (p.size() != y.size()) fail(ErrorCode::LengthMismatch, "probabilities vs labels");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += bce(p[i], y[i]);
  return sum / static_cast<double>(p.size());
}

/// Mean squared distance between student and teacher probabilities.
inline double prior_loss(std::span<const Real> p_student, std::span<const Real> p_teacher) {
  if (p_student.size() != p_teacher.size())
    fail(ErrorCode::LengthMismatch, "student and teacher batch sizes differ");
  if (p_student.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < p_student.size(); ++i) {
    const double diff = static_cast<double>(p_student[i]) - p_teacher[i];
    sum += diff * diff;
  }
  return sum / static_cast<double>(p_student.size());
}

inline LossBreakdown total_loss(double l_likelihood, double l_prior, double lambda) {
  if (lambda < 0.0) fail(ErrorCode::NegativeLambda, "lambda must be >= 0");
  return {l_likelihood, l_prior, lambda, l_likelihood + (lambda / 2.0) * l_prior};
}

/// d(total)/d(logit) for each instance of a batch of size n:
/// (p - y)/n + lambda * (p - p_t) * p * (1 - p) / n.
/// The prior term is skipped entirely when lambda == 0 or there is no teacher.
inline void total_loss_logit_grad(std::span<const Real> p, std::span<const int> y,
                                  const Real* p_teacher, double lambda, Real* dz) {
  const double inv_n = 1.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double g = (static_cast<double>(p[i]) - y[i]) * inv_n;
    if (lambda > 0.0 && p_teacher) {
      const double pi = p[i];
      g += lambda * (pi - p_teacher[i]) * pi * (1.0 - pi) * inv_n;
    }
    dz[i] = static_cast<Real>(g);
  }
}

/// The previous period's complete model (prior logits included), frozen.
class TeacherSnapshot {
 public:
  TeacherSnapshot() = default;

  static TeacherSnapshot capture(const CtrModel& state, int period) {
    if (!state.all_finite()) fail(ErrorCode::NonFiniteState, "cannot snapshot a non-finite model");
    auto copy = std::make_shared<CtrModel>(state);
    for (auto* s : copy->slots()) s->release_grad();
    TeacherSnapshot t;
    t.model_ = std::move(copy);
    t.period_ = period;
    return t;
  }

  bool valid() const { return model_ != nullptr; }
  int period() const { return period_; }
  const CtrModel& model() const { return *model_; }
  std::shared_ptr<const CtrModel> shared() const { return model_; }

  void predict(std::span<const EncodedInstance> batch, Real* out) const { model_->predict(batch, out); }
  std::vector<Real> predict(std::span<const EncodedInstance> batch) const { return model_->predict(batch); }

 private:
  std::shared_ptr<const CtrModel> model_;
  int period_ = 0;
};

inline TeacherSnapshot snapshot_teacher(const CtrModel& state, int period) {
  return TeacherSnapshot::capture(state, period);
}

}  // namespace ddp
