// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "amfmn/loss.hpp"
#include "test_util.hpp"

using namespace amfmn;

TEST(Margin, FrozenValues) {
  // From tests/oracles/oracles.py at 50 digits.
  EXPECT_NEAR(dynamic_margin(0.5, 0.5, 4.0), 0.44039853898894122203, 1e-15);
  EXPECT_NEAR(dynamic_margin(0.3, 0.6, 5.0), 0.58582885371346520098, 1e-15);
  EXPECT_NEAR(dynamic_margin(0.25, 0.3, -7.0), 0.051905950545674746624, 1e-15);
}

TEST(Margin, Endpoints) {
  for (double beta : {-10.0, -1.0, 1e-9, 0.5, 5.0, 40.0}) {
    EXPECT_NEAR(dynamic_margin(0.0, 0.6, beta), 0.6, 1e-12) << beta;
    EXPECT_EQ(dynamic_margin(1.0, 0.6, beta), 0.0) << beta;
  }
}

TEST(Margin, MonotoneDecreasing) {
  for (double beta : {-5.0, 0.1, 5.0}) {
    double prev = dynamic_margin(0.0, 0.6, beta);
    for (int i = 1; i <= 100; ++i) {
      const double m = dynamic_margin(i / 100.0, 0.6, beta);
      ASSERT_LT(m, prev);
      prev = m;
    }
  }
}

TEST(Margin, SmallBetaApproachesLinear) {
  for (double s : {0.1, 0.4, 0.9}) EXPECT_NEAR(dynamic_margin(s, 0.6, 1e-8), 0.6 * (1.0 - s), 1e-8);
}

TEST(Margin, RejectsZeroBeta) {
  EXPECT_THROW(dynamic_margin(0.5, 0.6, 0.0), ValidationError);
  EXPECT_THROW(MarginParams::dynamic(1.2, 5.0).validate(), ValidationError);
  EXPECT_THROW(MarginParams::fixed(0.0).validate(), ValidationError);
  EXPECT_THROW(parse_strategy("some"), ValidationError);
  EXPECT_THROW(parse_margin_mode("adaptive"), ValidationError);
}

TEST(Margin, Curve) {
  const auto c = margin_curve(0.6, 5.0, 11);
  ASSERT_EQ(c.size(), 11u);
  EXPECT_EQ(c.front().prior, 0.0);
  EXPECT_EQ(c.back().prior, 1.0);
  EXPECT_EQ(c.back().margin, 0.0);
  EXPECT_THROW(margin_curve(0.6, 5.0, 1), ValidationError);
}

TEST(Triplet, HandComputedAll) {
  const Tensor s = Tensor::matrix(2, 2, {0.9, 0.5, 0.8, 0.6});
  // image 0: 0.2 - 0.9 + 0.5 < 0; image 1: 0.2 - 0.6 + 0.8 = 0.4
  // text 0: 0.2 - 0.9 + 0.8 = 0.1; text 1: 0.2 - 0.6 + 0.5 = 0.1
  EXPECT_NEAR(triplet_fixed(s, 0.2, NegativeStrategy::all), 0.6, 1e-15);
  EXPECT_NEAR(triplet_fixed(s, 0.2, NegativeStrategy::hardest), 0.6, 1e-15);
}

TEST(Triplet, HardestPicksMaximum) {
  const Tensor s = Tensor::matrix(3, 3, {1.0, 0.9, 0.8, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  // Only image 0 and text columns 1, 2 have active hinges at alpha 0.5.
  const double all = triplet_fixed(s, 0.5, NegativeStrategy::all);
  const double hard = triplet_fixed(s, 0.5, NegativeStrategy::hardest);
  EXPECT_NEAR(all, 0.4 + 0.3 + 0.4 + 0.3, 1e-15);
  EXPECT_NEAR(hard, 0.4 + 0.4 + 0.3, 1e-15);
}

TEST(Triplet, SingletonBatchIsZero) {
  const LossResult r = triplet_loss(Tensor({1, 1}, 0.3), Tensor({1, 1}, 0.2), NegativeStrategy::all);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_THROW(triplet_loss(Tensor({2, 3}), Tensor({2, 3}), NegativeStrategy::all), DimensionError);
}

TEST(Triplet, DynamicWithZeroPriorsEqualsFixedGamma) {
  Rng rng(3);
  const Tensor s = rng.uniform_tensor({6, 6}, -1.0, 1.0);
  const Tensor zero({6, 6});
  for (auto st : {NegativeStrategy::all, NegativeStrategy::hardest}) {
    EXPECT_NEAR(triplet_dynamic(s, zero, 0.6, 5.0, st), triplet_fixed(s, 0.6, st), 1e-12);
  }
}

TEST(Triplet, IdenticalNegativesGetNoMargin) {
  // A negative whose captions match the positive's exactly (prior 1) adds
  // nothing unless it outscores the positive.
  const Tensor s = Tensor::matrix(2, 2, {0.5, 0.4, 0.4, 0.5});
  const Tensor ones({2, 2}, 1.0);
  EXPECT_EQ(triplet_dynamic(s, ones, 0.6, 5.0, NegativeStrategy::all), 0.0);
}

TEST(Triplet, ScoreGradientMatchesFiniteDifference) {
  Rng rng(4);
  const Tensor s = rng.uniform_tensor({5, 5}, -1.0, 1.0);
  const Tensor priors = rng.uniform_tensor({5, 5}, 0.0, 1.0);
  const Tensor margins = margin_matrix(priors, MarginParams::dynamic(0.6, 5.0));
  for (auto st : {NegativeStrategy::all, NegativeStrategy::hardest}) {
    const LossResult r = triplet_loss(s, margins, st);
    ASSERT_GT(r.kink_distance, 1e-4);
    const Tensor fd = finite_diff_grad([&](const Tensor& x) { return triplet_loss(x, margins, st).value; }, s);
    EXPECT_LT(testutil::max_abs_diff(fd.values(), r.dscores.values()), 1e-6);
  }
}

namespace {

struct GradCase {
  PairBatch batch;
  ProjectionHeads heads;
};

GradCase make_case(std::uint64_t seed, VgaVariant variant, std::size_t b) {
  Rng rng(seed);
  const std::size_t dv = 7, dt = 5, df = 4;
  const VgaParams vga = VgaParams::random(variant, dv, dt, rng);
  GradCase c;
  c.heads = ProjectionHeads::random(dv, dt, df, rng);
  std::vector<TextFeatures> texts;
  for (std::size_t i = 0; i < b; ++i) {
    c.batch.visuals.push_back(rng.normal_tensor({dv}, 1.0).storage());
    TextFeatures t;
    t.sentence = rng.normal_tensor({dt}, 1.0).storage();
    if (i % 2 == 0) t.keywords = rng.normal_tensor({dt}, 1.0).storage();
    texts.push_back(std::move(t));
  }
  c.batch.guided = guide_pairs(vga, c.batch.visuals, texts);
  c.batch.priors = rng.uniform_tensor({b, b}, 0.0, 1.0);
  return c;
}

}  // namespace

class HeadGradient : public ::testing::TestWithParam<std::tuple<VgaVariant, NegativeStrategy>> {};

TEST_P(HeadGradient, MatchesFiniteDifference) {
  const auto [variant, strategy] = GetParam();
  const MarginParams margin = MarginParams::dynamic(0.6, 5.0, strategy);
  int checked = 0;
  for (std::uint64_t seed = 1; seed < 40 && checked < 3; ++seed) {
    GradCase c = make_case(seed, variant, 5);
    HeadGradients g = grad_projection(c.batch, c.heads, margin);
    if (g.kink_distance < 1e-3 || g.loss == 0.0) continue;
    ++checked;
    EXPECT_NEAR(g.loss, batch_loss(c.batch, c.heads, margin), 1e-12);
    auto params = c.heads.parameters();
    auto grads = g.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor fd = finite_diff_grad(
          [&](const Tensor& x) {
            ProjectionHeads h = c.heads;
            *h.parameters()[k] = x;
            return batch_loss(c.batch, h, margin);
          },
          *params[k]);
      EXPECT_LT(testutil::max_abs_diff(fd.values(), grads[k]->values()), 1e-6) << "seed " << seed << " param " << k;
    }
  }
  EXPECT_EQ(checked, 3);
}

INSTANTIATE_TEST_SUITE_P(All, HeadGradient,
                         ::testing::Combine(::testing::Values(VgaVariant::soft, VgaVariant::fusion, VgaVariant::sim),
                                            ::testing::Values(NegativeStrategy::all, NegativeStrategy::hardest)));
