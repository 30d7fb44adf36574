// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ddp/ddp.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ddp;

TEST(Discretize, BoundariesAndRange) {
  EXPECT_EQ(discretize(0.0, 10), 0u);
  EXPECT_EQ(discretize(1.0, 10), 9u);
  EXPECT_EQ(discretize(0.25, 10), 5u);  // sqrt = 0.5
  EXPECT_EQ(discretize(0.0099, 10), 0u);
  EXPECT_EQ(discretize(0.0101, 10), 1u);
  EXPECT_EQ(discretize(0.81, 5), 4u);
}

TEST(Discretize, MonotoneAndInRangeForEveryB) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t B : {2u, 5u, 10u, 50u}) {
    for (int i = 0; i < 5000; ++i) {
      const double a = u(rng), b = u(rng);
      const auto ba = discretize(a, B), bb = discretize(b, B);
      EXPECT_LT(ba, B);
      if (a <= b) {
        EXPECT_LE(ba, bb);
      }
      // Equal-width intervals in sqrt space.
      const double lo = static_cast<double>(ba) / static_cast<double>(B);
      EXPECT_GE(std::sqrt(a) + 1e-12, lo);
      if (ba + 1 < B) {
        EXPECT_LT(std::sqrt(a), lo + 1.0 / static_cast<double>(B) + 1e-12);
      }
    }
  }
}

TEST(FpLoss, MeanOverFields) {
  const std::vector<Real> s = {0.2, 0.5, 0.9};
  const double want = (oracle::clamped_bce(0.2, 1) + oracle::clamped_bce(0.5, 1) + oracle::clamped_bce(0.9, 1)) / 3;
  EXPECT_NEAR(fp_loss(s, 1), want, 1e-15);
  EXPECT_GE(fp_loss(s, 0), 0.0);
}

TEST(ConcatPrior, OrderAndShapes) {
  const std::vector<std::vector<Real>> e = {{1, 2}, {3, 4}}, o = {{5, 6}, {7, 8}};
  const auto c = concat_prior(e, o);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0], e[0]);
  EXPECT_EQ(c[3], o[1]);
  EXPECT_THROW(concat_prior(e, {{1, 2}}), Error);
  EXPECT_THROW(concat_prior(e, {{1, 2}, {3}}), Error);
}

namespace {

Schema mixed_schema() {
  return Schema({{"a", 4, false, FieldEncoding::Identity, 0}, {"tags", 5, true, FieldEncoding::Identity, 0}});
}

EncodedInstance mixed(std::uint32_t a, std::vector<std::uint32_t> tags, int y) {
  EncodedInstance e;
  e.indices.push_back(a);
  e.field_end.push_back(1);
  for (auto t : tags) e.indices.push_back(4 + t);
  e.field_end.push_back(static_cast<std::uint32_t>(e.indices.size()));
  e.label = y;
  return e;
}

}  // namespace

TEST(FeaturePrior, ForwardUsesMeanOfLogits) {
  const auto schema = mixed_schema();
  std::mt19937_64 rng(1);
  FeaturePriorLayer fp(schema, 10, 3, rng);
  auto& C = fp.logits().values;
  C(1, 0) = 0.4;
  C(5, 0) = -1.0;
  C(7, 0) = 2.0;
  const auto out = fp.forward(mixed(1, {1, 3}, 0));
  EXPECT_NEAR(out.shat[0], 1 / (1 + std::exp(-0.4)), 1e-15);
  EXPECT_NEAR(out.shat[1], 1 / (1 + std::exp(-0.5)), 1e-15);
  EXPECT_EQ(out.bins[1], discretize(out.shat[1], 10));
  // o_i is row bins[i] of U_i.
  const auto& U = fp.bin_tables().values;
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out.o[1][j], U(10 + out.bins[1], j));
}

TEST(FeaturePrior, ZeroInitIsHalf) {
  const auto schema = mixed_schema();
  std::mt19937_64 rng(1);
  FeaturePriorLayer fp(schema, 5, 2, rng);
  const auto out = fp.forward(mixed(0, {0}, 1));
  EXPECT_EQ(out.shat[0], 0.5);
  EXPECT_EQ(out.bins[0], discretize(0.5, 5));
}

TEST(FeaturePrior, LogitGradientMatchesFiniteDifference) {
  const auto schema = mixed_schema();
  std::mt19937_64 rng(9);
  FeaturePriorLayer fp(schema, 5, 2, rng);
  fill_uniform(fp.logits().values, -1.5, 1.5, rng);
  std::vector<EncodedInstance> batch = {mixed(0, {0, 2}, 1), mixed(3, {4}, 0), mixed(0, {1, 2, 4}, 0)};
  const std::size_t M = 2;
  auto loss = [&] {
    std::vector<Real> s(batch.size() * M);
    fp.forward(batch, s.data(), nullptr);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i)
      sum += fp_loss(std::span<const Real>(s.data() + i * M, M), batch[i].label);
    return sum;
  };
  auto grads = [&] {
    fp.logits().clear_grad();
    fp.logits().grad.set_zero();
    std::vector<Real> s(batch.size() * M);
    fp.forward(batch, s.data(), nullptr);
    fp.accumulate_grad(batch, s.data(), 1.0);
  };
  std::vector<ParamSlot*> slots{&fp.logits()};
  EXPECT_LE(grad_check(slots, loss, grads).max_rel_error, 1e-6);
  // Untouched logit (value 1 of field a) carries no gradient.
  grads();
  EXPECT_EQ(fp.logits().grad(1, 0), 0.0);
  EXPECT_FALSE(fp.logits().is_touched(1));
}

TEST(FeaturePrior, BinScatterRoutesToSelectedRow) {
  const auto schema = mixed_schema();
  std::mt19937_64 rng(1);
  FeaturePriorLayer fp(schema, 5, 2, rng);
  const std::vector<std::uint32_t> bins = {3, 1, 0, 1};
  const std::vector<Real> up = {1, 2, 3, 4, 10, 20, 30, 40};
  fp.scatter_grad(2, bins.data(), up.data(), 4, 0);
  const auto& G = fp.bin_tables().grad;
  EXPECT_EQ(G(3, 0), 1);
  EXPECT_EQ(G(3, 1), 2);
  EXPECT_EQ(G(0, 0), 10);
  EXPECT_EQ(G(5 + 1, 0), 3 + 30);
  EXPECT_EQ(G(5 + 1, 1), 4 + 40);
  EXPECT_THROW(fp.bin_row(0, 5), Error);
}

TEST(FeaturePrior, RejectsSingleBin) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(FeaturePriorLayer(mixed_schema(), 1, 2, rng), Error);
}

// Stationary stream: per-value SGD on the prior logits converges to the
// marginal CTR of each frequently shown value.
TEST(FeaturePrior, ConvergesToMarginalCtr) {
  const auto schema = fixture::one_hot_schema({3}, false);
  const std::vector<double> ctr = {0.05, 0.1, 0.3};
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EncodedInstance> data;
  for (int i = 0; i < 30000; ++i) {
    const std::uint32_t v = static_cast<std::uint32_t>(i % 3);
    const std::vector<std::uint32_t> local = {v};
    data.push_back(make_instance(*schema, local, u(rng) < ctr[v] ? 1 : 0));
  }
  std::shuffle(data.begin(), data.end(), rng);
  FeaturePriorLayer fp(*schema, 10, 2, rng);
  SgdState sgd{1e-2};
  std::vector<Real> s(256);
  for (std::size_t start = 0; start < data.size(); start += 256) {
    const auto batch = std::span(data).subspan(start, std::min<std::size_t>(256, data.size() - start));
    fp.forward(batch, s.data(), nullptr);
    fp.accumulate_grad(batch, s.data(), 1.0);
    sgd_step(fp.logits(), sgd);
    fp.logits().clear_grad();
  }
  for (std::uint32_t v = 0; v < 3; ++v) {
    const double shat = sigmoid(fp.logits().values(v, 0));
    EXPECT_NEAR(shat, ctr[v], 0.05) << "value " << v;
  }
}
