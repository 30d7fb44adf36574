// SPDX-License-Identifier: Apache-2.0
#pragma once

// Interaction modules mapping the concatenated field vectors e' to a click
// logit. The sigmoid is applied by the caller.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddp/embedding.hpp"
#include "ddp/nn_core.hpp"

namespace ddp {

enum class InteractionKind { Dnn, DeepFm };

inline std::string to_string(InteractionKind k) { return k == InteractionKind::Dnn ? "DNN" : "DEEPFM"; }

inline InteractionKind parse_interaction_kind(const std::string& s) {
  if (s == "DNN" || s == "dnn") return InteractionKind::Dnn;
  if (s == "DEEPFM" || s == "deepfm" || s == "DeepFM") return InteractionKind::DeepFm;
  fail(ErrorCode::ConfigError, "unknown interaction kind '" + s + "'");
}

struct InteractionConfig {
  InteractionKind kind = InteractionKind::DeepFm;
  std::vector<std::size_t> hidden = {200, 200, 200};
  /// Number of d-wide vectors in e' (2M with the feature prior, M without).
  std::size_t num_vectors = 0;
  std::size_t dim = 16;
  /// Sizes of the DeepFM first-order tables: N raw values, and M fields
  /// times `bins` prior bins (bins = 0 when there is no prior).
  std::size_t num_values = 0;
  std::size_t num_fields = 0;
  std::size_t bins = 0;

  std::size_t input_width() const { return num_vectors * dim; }
};

/// What the interaction module sees for a batch: e' flattened row-major
/// (n x num_vectors*d), plus the ids the DeepFM first-order term reads.
struct InteractionInput {
  const Real* x = nullptr;
  std::size_t n = 0;
  std::span<const EncodedInstance> batch;
  const std::uint32_t* bins = nullptr;  // n x M, or null without prior
};

struct ForwardCache {
  InteractionInput input;
  /// Post-ReLU activations of every hidden layer.
  std::vector<DenseMatrix> hidden;
  /// DeepFM: per-instance sum over vectors of e' (n x d).
  DenseMatrix fm_sum;
  DenseMatrix scratch_a;
  DenseMatrix scratch_b;
  bool valid = false;
};

class Interaction {
 public:
  Interaction() = default;

  template <typename Rng>
  Interaction(const InteractionConfig& config, Rng& rng) : config_(config) {
    if (config.input_width() == 0) fail(ErrorCode::ConfigError, "interaction input width is 0");
    std::size_t in = config.input_width();
    for (std::size_t l = 0; l < config.hidden.size(); ++l) {
      const std::size_t out = config.hidden[l];
      if (out == 0) fail(ErrorCode::ConfigError, "hidden layer sizes must be > 0");
      const std::string base = "interaction.mlp" + std::to_string(l);
      layers_.push_back(ParamSlot(base + ".weight", in, out, UpdateGroup::Adam, false));
      glorot(layers_.back().values, rng);
      layers_.push_back(ParamSlot(base + ".bias", 1, out, UpdateGroup::Adam, false));
      in = out;
    }
    layers_.push_back(ParamSlot("interaction.out.weight", in, 1, UpdateGroup::Adam, false));
    glorot(layers_.back().values, rng);
    layers_.push_back(ParamSlot("interaction.out.bias", 1, 1, UpdateGroup::Adam, false));
    if (config.kind == InteractionKind::DeepFm) {
      fm_w_ = ParamSlot("interaction.fm.w", config.num_values, 1, UpdateGroup::Adam, true);
      if (config.bins > 0)
        fm_wb_ = ParamSlot("interaction.fm.wb", config.num_fields * config.bins, 1,
                           UpdateGroup::Adam, true);
    }
  }

  const InteractionConfig& config() const { return config_; }

  std::vector<ParamSlot*> slots() {
    std::vector<ParamSlot*> out;
    for (auto& s : layers_) out.push_back(&s);
    if (config_.kind == InteractionKind::DeepFm) {
      out.push_back(&fm_w_);
      if (config_.bins > 0) out.push_back(&fm_wb_);
    }
    return out;
  }

  std::vector<const ParamSlot*> slots() const {
    std::vector<const ParamSlot*> out;
    for (auto* s : const_cast<Interaction*>(this)->slots()) out.push_back(s);
    return out;
  }

  /// Writes one logit per instance. With a cache the activations are kept
  /// for backward; without one the pass allocates only local scratch.
  void forward(const InteractionInput& in, Real* logits, ForwardCache* cache) const {
    const std::size_t n = in.n;
    const std::size_t width = config_.input_width();
    if (in.batch.size() != n) fail(ErrorCode::DimMismatch, "batch size differs from input rows");
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.input = in;
    c.hidden.resize(config_.hidden.size());

    const Real* prev = in.x;
    std::size_t prev_w = width;
    for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
      const ParamSlot& w = layers_[2 * l];
      const ParamSlot& b = layers_[2 * l + 1];
      DenseMatrix& h = c.hidden[l];
      if (h.rows != n || h.cols != w.cols()) h.resize(n, w.cols());
      gemm::nn(prev, w.values.data.data(), h.data.data(), n, prev_w, w.cols());
      const Real* bias = b.values.data.data();
      for (std::size_t i = 0; i < n; ++i) {
        Real* row = h.data.data() + i * w.cols();
        for (std::size_t j = 0; j < w.cols(); ++j) row[j] = std::max(Real(0), row[j] + bias[j]);
      }
      prev = h.data.data();
      prev_w = w.cols();
    }
    const ParamSlot& wo = layers_[layers_.size() - 2];
    const Real bo = layers_.back().values.data[0];
    gemm::nn(prev, wo.values.data.data(), logits, n, prev_w, std::size_t{1});
    for (std::size_t i = 0; i < n; ++i) logits[i] += bo;

    if (config_.kind == InteractionKind::DeepFm) {
      const std::size_t d = config_.dim, V = config_.num_vectors;
      if (c.fm_sum.rows != n || c.fm_sum.cols != d) c.fm_sum.resize(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        const Real* x = in.x + i * width;
        Real* s = c.fm_sum.data.data() + i * d;
        std::fill(s, s + d, Real(0));
        double sq = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
          for (std::size_t j = 0; j < d; ++j) {
            s[j] += x[v * d + j];
            sq += static_cast<double>(x[v * d + j]) * x[v * d + j];
          }
        }
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(s[j]) * s[j];
        double first = 0.0;
        const auto& inst = in.batch[i];
        for (std::size_t f = 0; f < inst.num_fields(); ++f) {
          const auto idx = inst.field(f);
          double acc = 0.0;
          for (auto k : idx) acc += fm_w_.values.data[k];
          first += acc / static_cast<double>(idx.size());
          if (config_.bins > 0 && in.bins) {
            first += fm_wb_.values.data[f * config_.bins + in.bins[i * config_.num_fields + f]];
          }
        }
        logits[i] += static_cast<Real>(0.5 * (ss - sq) + first);
      }
    }
    c.valid = cache != nullptr;
  }

  /// Accumulates parameter gradients and writes d(loss)/d(e') into `dinput`
  /// (n x input_width). The cache is consumed.
  void backward(ForwardCache& c, const Real* dlogit, Real* dinput) {
    if (!c.valid) fail(ErrorCode::StaleCache, "backward needs a fresh training-mode forward");
    c.valid = false;
    const std::size_t n = c.input.n;
    const std::size_t width = config_.input_width();
    const std::size_t L = config_.hidden.size();

    ParamSlot& wo = layers_[2 * L];
    ParamSlot& bo = layers_[2 * L + 1];
    const Real* last = L == 0 ? c.input.x : c.hidden[L - 1].data.data();
    const std::size_t last_w = wo.rows();
    gemm::tn_acc(last, dlogit, wo.grad.data.data(), n, last_w, std::size_t{1});
    double db = 0.0;
    for (std::size_t i = 0; i < n; ++i) db += dlogit[i];
    bo.grad.data[0] += static_cast<Real>(db);

    // Upstream gradient w.r.t. the current layer output.
    DenseMatrix* up = &c.scratch_a;
    DenseMatrix* next = &c.scratch_b;
    if (L == 0) {
      gemm::nt(dlogit, wo.values.data.data(), dinput, n, std::size_t{1}, width);
    } else {
      up->resize(n, last_w);
      gemm::nt(dlogit, wo.values.data.data(), up->data.data(), n, std::size_t{1}, last_w);
      for (std::size_t l = L; l-- > 0;) {
        ParamSlot& w = layers_[2 * l];
        ParamSlot& b = layers_[2 * l + 1];
        const DenseMatrix& h = c.hidden[l];
        // ReLU mask: gradient passes where the activation is positive.
        for (std::size_t k = 0; k < up->data.size(); ++k)
          if (h.data[k] <= Real(0)) up->data[k] = Real(0);
        const Real* below = l == 0 ? c.input.x : c.hidden[l - 1].data.data();
        gemm::tn_acc(below, up->data.data(), w.grad.data.data(), n, w.rows(), w.cols());
        Real* gb = b.grad.data.data();
        for (std::size_t i = 0; i < n; ++i) {
          const Real* r = up->data.data() + i * w.cols();
          for (std::size_t j = 0; j < w.cols(); ++j) gb[j] += r[j];
        }
        if (l == 0) {
          gemm::nt(up->data.data(), w.values.data.data(), dinput, n, w.cols(), w.rows());
        } else {
          next->resize(n, w.rows());
          gemm::nt(up->data.data(), w.values.data.data(), next->data.data(), n, w.cols(), w.rows());
          std::swap(up, next);
        }
      }
    }

    if (config_.kind == InteractionKind::DeepFm) {
      const std::size_t d = config_.dim, V = config_.num_vectors;
      for (std::size_t i = 0; i < n; ++i) {
        const Real g = dlogit[i];
        const Real* x = c.input.x + i * width;
        const Real* s = c.fm_sum.data.data() + i * d;
        Real* dx = dinput + i * width;
        for (std::size_t v = 0; v < V; ++v)
          for (std::size_t j = 0; j < d; ++j) dx[v * d + j] += g * (s[j] - x[v * d + j]);
        const auto& inst = c.input.batch[i];
        for (std::size_t f = 0; f < inst.num_fields(); ++f) {
          const auto idx = inst.field(f);
          const Real share = g / static_cast<Real>(idx.size());
          for (auto k : idx) {
            fm_w_.grad.data[k] += share;
            fm_w_.mark_row(k);
          }
          if (config_.bins > 0 && c.input.bins) {
            const std::size_t r = f * config_.bins + c.input.bins[i * config_.num_fields + f];
            fm_wb_.grad.data[r] += g;
            fm_wb_.mark_row(r);
          }
        }
      }
    }
  }

 private:
  template <typename Rng>
  static void glorot(DenseMatrix& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    fill_uniform(w, -limit, limit, rng);
  }

  InteractionConfig config_;
  std::vector<ParamSlot> layers_;
  ParamSlot fm_w_;
  ParamSlot fm_wb_;
};

/// FM second-order term over a set of vectors via the sum-of-squares identity.
inline double fm_second_order(std::span<const std::vector<Real>> vectors) {
  if (vectors.empty()) return 0.0;
  const std::size_t d = vectors.front().size();
  double out = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double s = 0.0, sq = 0.0;
    for (const auto& v : vectors) {
      s += v[k];
      sq += static_cast<double>(v[k]) * v[k];
    }
    out += s * s - sq;
  }
  return 0.5 * out;
}

}  // namespace ddp
