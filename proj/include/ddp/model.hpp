// SPDX-License-Identifier: Apache-2.0
#pragma once

// The full learnable state theta = {Phi, Theta}: feature-prior logits (Phi),
// plus embeddings, prior bin tables and interaction weights (Theta).

#include <memory>
#include <random>
#include <span>
#include <vector>

#include "ddp/embedding.hpp"
#include "ddp/feature_prior.hpp"
#include "ddp/interaction.hpp"
#include "ddp/nn_core.hpp"

namespace ddp {

struct ModelConfig {
  std::size_t embedding_dim = 16;
  std::size_t bins = 10;
  bool feature_prior = true;
  InteractionKind interaction = InteractionKind::DeepFm;
  std::vector<std::size_t> hidden = {200, 200, 200};
  /// Initial value of every prior logit (0 gives shat = 0.5).
  double prior_init_logit = 0.0;
};

/// Reusable buffers for building e' and running the interaction module.
struct ForwardBuffers {
  DenseMatrix x;
  std::vector<Real> shat;
  std::vector<std::uint32_t> bins;
  std::vector<Real> logits;
};

class CtrModel {
 public:
  CtrModel() = default;

  CtrModel(std::shared_ptr<const Schema> schema, const ModelConfig& config, std::uint64_t seed)
      : schema_(std::move(schema)), config_(config) {
    // One stream per module, so switching the prior on or off leaves the
    // embedding initialization untouched.
    auto stream = [seed](std::uint64_t k) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(k)};
      return std::mt19937_64(seq);
    };
    auto rng = stream(1);
    embedding_ = EmbeddingTable(*schema_, config.embedding_dim, rng);
    if (config.feature_prior) {
      rng = stream(2);
      prior_ = FeaturePriorLayer(*schema_, config.bins, config.embedding_dim, rng,
                                 config.prior_init_logit);
    }
    rng = stream(3);
    InteractionConfig ic;
    ic.kind = config.interaction;
    ic.hidden = config.hidden;
    ic.dim = config.embedding_dim;
    ic.num_fields = schema_->num_fields();
    ic.num_vectors = schema_->num_fields() * (config.feature_prior ? 2 : 1);
    ic.num_values = schema_->total_values();
    ic.bins = config.feature_prior ? config.bins : 0;
    interaction_ = Interaction(ic, rng);
  }

  const Schema& schema() const { return *schema_; }
  const std::shared_ptr<const Schema>& schema_ptr() const { return schema_; }
  const ModelConfig& config() const { return config_; }
  bool has_prior() const { return config_.feature_prior; }
  std::size_t num_fields() const { return schema_->num_fields(); }
  std::size_t input_width() const { return interaction_.config().input_width(); }

  EmbeddingTable& embedding() { return embedding_; }
  const EmbeddingTable& embedding() const { return embedding_; }
  FeaturePriorLayer& prior() { return prior_; }
  const FeaturePriorLayer& prior() const { return prior_; }
  Interaction& interaction() { return interaction_; }
  const Interaction& interaction() const { return interaction_; }

  /// Every slot, Phi first.
  std::vector<ParamSlot*> slots() {
    std::vector<ParamSlot*> out;
    if (has_prior()) out.push_back(&prior_.logits());
    out.push_back(&embedding_.slot());
    if (has_prior()) out.push_back(&prior_.bin_tables());
    for (auto* s : interaction_.slots()) out.push_back(s);
    return out;
  }

  std::vector<const ParamSlot*> slots() const {
    std::vector<const ParamSlot*> out;
    for (auto* s : const_cast<CtrModel*>(this)->slots()) out.push_back(s);
    return out;
  }

  ParamSlot* find_slot(const std::string& name) {
    for (auto* s : slots())
      if (s->name == name) return s;
    return nullptr;
  }

  bool all_finite() const {
    for (const auto* s : slots())
      if (!s->values.all_finite()) return false;
    return true;
  }

  /// Prior pass: shat and bins for each (instance, field). No-op without prior.
  void prior_forward(std::span<const EncodedInstance> batch, ForwardBuffers& buf) const {
    if (!has_prior()) return;
    const std::size_t m = num_fields();
    buf.shat.resize(batch.size() * m);
    buf.bins.resize(batch.size() * m);
    prior_.forward(batch, buf.shat.data(), buf.bins.data());
  }

  /// Fills buf.x with e' for the batch using `bins` (n x M) for the prior
  /// half. When `record` is set the embedding lookup is remembered for the
  /// gradient scatter.
  void build_input(std::span<const EncodedInstance> batch, const std::uint32_t* bins,
                   ForwardBuffers& buf, bool record) {
    resize_input(batch.size(), buf);
    embedding_.lookup(batch, buf.x.data.data(), buf.x.cols, 0, record);
    if (has_prior())
      prior_.prior_embedding(batch.size(), bins, buf.x.data.data(), buf.x.cols,
                             num_fields() * embedding_.dim());
  }

  void build_input(std::span<const EncodedInstance> batch, const std::uint32_t* bins,
                   ForwardBuffers& buf) const {
    resize_input(batch.size(), buf);
    embedding_.lookup(batch, buf.x.data.data(), buf.x.cols, 0);
    if (has_prior())
      prior_.prior_embedding(batch.size(), bins, buf.x.data.data(), buf.x.cols,
                             num_fields() * embedding_.dim());
  }

  /// Click probabilities in evaluation mode.
  void predict(std::span<const EncodedInstance> batch, Real* out) const {
    constexpr std::size_t kChunk = 1024;
    ForwardBuffers buf;
    for (std::size_t start = 0; start < batch.size(); start += kChunk) {
      const auto chunk = batch.subspan(start, std::min(kChunk, batch.size() - start));
      prior_forward(chunk, buf);
      build_input(chunk, has_prior() ? buf.bins.data() : nullptr, buf);
      InteractionInput in{buf.x.data.data(), chunk.size(), chunk,
                          has_prior() ? buf.bins.data() : nullptr};
      interaction_.forward(in, out + start, nullptr);
      for (std::size_t i = 0; i < chunk.size(); ++i) out[start + i] = sigmoid(out[start + i]);
    }
  }

  std::vector<Real> predict(std::span<const EncodedInstance> batch) const {
    std::vector<Real> out(batch.size());
    predict(batch, out.data());
    return out;
  }

 private:
  void resize_input(std::size_t n, ForwardBuffers& buf) const {
    if (buf.x.rows != n || buf.x.cols != input_width()) buf.x.resize(n, input_width());
  }

  std::shared_ptr<const Schema> schema_;
  ModelConfig config_;
  EmbeddingTable embedding_;
  FeaturePriorLayer prior_;
  Interaction interaction_;
};

}  // namespace ddp
