// SPDX-License-Identifier: Apache-2.0
#pragma once

// Feature prior layer: a scalar logit per sparse feature value estimating
// that value's CTR, discretized into B bins over sqrt(CTR) and re-embedded
// through per-field bin tables. The logits (C) are trained only by their own
// BCE objective; the bin tables (U) are trained by the main loss.

#include <cmath>
#include <span>
#include <vector>

#include "ddp/embedding.hpp"
#include "ddp/nn_core.hpp"

namespace ddp {

/// Bin of an estimated CTR: min(floor(B * sqrt(shat)), B - 1).
inline std::size_t discretize(double shat, std::size_t bins) {
  const double s = std::clamp(shat, 0.0, 1.0);
  const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(bins) * std::sqrt(s)));
  return std::min(b, bins - 1);
}

/// Per-instance prior loss: mean over fields of bce(shat_i, y).
inline double fp_loss(std::span<const Real> shat, int y) {
  if (shat.empty()) return 0.0;
  double sum = 0.0;
  for (auto s : shat) sum += bce(s, y);
  return sum / static_cast<double>(shat.size());
}

/// e' = [e_1..e_M, o_1..o_M].
inline std::vector<std::vector<Real>> concat_prior(const std::vector<std::vector<Real>>& e,
                                                   const std::vector<std::vector<Real>>& o) {
  if (e.size() != o.size()) fail(ErrorCode::DimMismatch, "e and o differ in field count");
  std::vector<std::vector<Real>> out;
  out.reserve(e.size() * 2);
  const std::size_t d = e.empty() ? 0 : e.front().size();
  for (const auto& v : e) {
    if (v.size() != d) fail(ErrorCode::DimMismatch, "field embedding width differs");
    out.push_back(v);
  }
  for (const auto& v : o) {
    if (v.size() != d) fail(ErrorCode::DimMismatch, "prior embedding width differs");
    out.push_back(v);
  }
  return out;
}

struct PriorOutput {
  std::vector<Real> shat;
  std::vector<std::uint32_t> bins;
  std::vector<std::vector<Real>> o;
};

class FeaturePriorLayer {
 public:
  FeaturePriorLayer() = default;

  template <typename Rng>
  FeaturePriorLayer(const Schema& schema, std::size_t bins, std::size_t dim, Rng& rng,
                    double init_logit = 0.0)
      : c_("fp.C", schema.total_values(), 1, UpdateGroup::Sgd, true),
        u_("fp.U", schema.num_fields() * bins, dim, UpdateGroup::Adam, true),
        bins_(bins),
        num_fields_(schema.num_fields()) {
    if (bins < 2) fail(ErrorCode::ConfigError, "feature prior needs at least 2 bins");
    std::fill(c_.values.data.begin(), c_.values.data.end(), static_cast<Real>(init_logit));
    fill_uniform(u_.values, -0.01, 0.01, rng);
  }

  std::size_t bins() const { return bins_; }
  std::size_t dim() const { return u_.cols(); }
  std::size_t num_fields() const { return num_fields_; }
  ParamSlot& logits() { return c_; }
  const ParamSlot& logits() const { return c_; }
  ParamSlot& bin_tables() { return u_; }
  const ParamSlot& bin_tables() const { return u_; }

  /// shat (n x M) and bins (n x M) for a batch. Multi-hot fields average the
  /// logits of their value set before the sigmoid.
  void forward(std::span<const EncodedInstance> batch, Real* shat, std::uint32_t* bins) const {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& inst = batch[i];
      if (inst.num_fields() != num_fields_)
        fail(ErrorCode::DimMismatch, "instance field count differs from schema");
      for (std::size_t f = 0; f < num_fields_; ++f) {
        const auto idx = inst.field(f);
        double z = 0.0;
        for (auto k : idx) {
          if (k >= c_.rows()) fail(ErrorCode::IndexOutOfRange, "prior index " + std::to_string(k));
          z += c_.values.data[k];
        }
        z /= static_cast<double>(idx.size());
        const double s = sigmoid(z);
        shat[i * num_fields_ + f] = static_cast<Real>(s);
        if (bins) bins[i * num_fields_ + f] = static_cast<std::uint32_t>(discretize(s, bins_));
      }
    }
  }

  PriorOutput forward(const EncodedInstance& inst) const {
    PriorOutput out;
    out.shat.resize(num_fields_);
    out.bins.resize(num_fields_);
    forward(std::span(&inst, 1), out.shat.data(), out.bins.data());
    out.o = prior_embedding(out.bins);
    return out;
  }

  /// Adds scale * d(per-instance prior loss)/dC for every instance in the
  /// batch: (shat_i - y) / (M * |set_i|) on each logit of field i.
  void accumulate_grad(std::span<const EncodedInstance> batch, const Real* shat, double scale) {
    const double inv_m = 1.0 / static_cast<double>(num_fields_);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& inst = batch[i];
      for (std::size_t f = 0; f < num_fields_; ++f) {
        const auto idx = inst.field(f);
        const double g = scale * (shat[i * num_fields_ + f] - inst.label) * inv_m /
                         static_cast<double>(idx.size());
        for (auto k : idx) {
          c_.grad.data[k] += static_cast<Real>(g);
          c_.mark_row(k);
        }
      }
    }
  }

  std::size_t bin_row(std::size_t field, std::uint32_t bin) const {
    if (bin >= bins_) fail(ErrorCode::IndexOutOfRange, "bin " + std::to_string(bin));
    return field * bins_ + bin;
  }

  /// o_i = row bins[i] of U_i, written into `out` rows at column `col`.
  void prior_embedding(std::size_t n, const std::uint32_t* bins, Real* out, std::size_t stride,
                       std::size_t col) const {
    const std::size_t d = dim();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t f = 0; f < num_fields_; ++f) {
        const Real* src = u_.values.data.data() + bin_row(f, bins[i * num_fields_ + f]) * d;
        std::copy(src, src + d, out + i * stride + col + f * d);
      }
    }
  }

  std::vector<std::vector<Real>> prior_embedding(std::span<const std::uint32_t> bins) const {
    if (bins.size() != num_fields_) fail(ErrorCode::DimMismatch, "one bin per field expected");
    std::vector<std::vector<Real>> o(num_fields_);
    for (std::size_t f = 0; f < num_fields_; ++f) {
      const auto r = u_.values.row(bin_row(f, bins[f]));
      o[f].assign(r.begin(), r.end());
    }
    return o;
  }

  /// Routes d(loss)/d(o) into the selected U rows.
  void scatter_grad(std::size_t n, const std::uint32_t* bins, const Real* upstream,
                    std::size_t stride, std::size_t col) {
    const std::size_t d = dim();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t f = 0; f < num_fields_; ++f) {
        const std::size_t r = bin_row(f, bins[i * num_fields_ + f]);
        Real* g = u_.grad.data.data() + r * d;
        const Real* up = upstream + i * stride + col + f * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += up[j];
        u_.mark_row(r);
      }
    }
  }

 private:
  ParamSlot c_;
  ParamSlot u_;
  std::size_t bins_ = 0;
  std::size_t num_fields_ = 0;
};

}  // namespace ddp
