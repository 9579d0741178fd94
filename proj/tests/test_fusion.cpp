// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "amfmn/model.hpp"
#include "test_util.hpp"

using namespace amfmn;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n) {
  const Tensor t = rng.normal_tensor({n}, 1.0);
  return t.storage();
}

}  // namespace

TEST(Vga, ParseVariant) {
  EXPECT_EQ(parse_variant("soft"), VgaVariant::soft);
  EXPECT_EQ(parse_variant("fusion"), VgaVariant::fusion);
  EXPECT_EQ(parse_variant("sim"), VgaVariant::sim);
  EXPECT_THROW(parse_variant("hard"), ValidationError);
  EXPECT_EQ(to_string(VgaVariant::sim), "sim");
}

TEST(Vga, ZeroParamsHalveOrVanish) {
  Rng rng(1);
  const auto v = rand_vec(rng, 6), t = rand_vec(rng, 4);
  const auto soft = vga(v, t, VgaParams::zeros(VgaVariant::soft, 6, 4));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(soft[i], 0.5 * t[i]);
  for (double x : vga(v, t, VgaParams::zeros(VgaVariant::fusion, 6, 4))) EXPECT_EQ(x, 0.0);
  for (double x : vga(v, t, VgaParams::zeros(VgaVariant::sim, 6, 4))) EXPECT_EQ(x, 0.0);
}

TEST(Vga, SoftMatchesFormula) {
  Rng rng(2);
  const VgaParams p = VgaParams::random(VgaVariant::soft, 5, 3, rng);
  const auto v = rand_vec(rng, 5), t = rand_vec(rng, 3);
  const auto got = vga_soft(v, t, p);
  for (std::size_t i = 0; i < 3; ++i) {
    double a = p.first.bias[i];
    for (std::size_t k = 0; k < 5; ++k) a += p.first.weight.at(i, k) * v[k];
    EXPECT_NEAR(got[i], t[i] / (1.0 + std::exp(-a)), 1e-14);
  }
}

TEST(Vga, SimGateOnIdenticalProjections) {
  // With the same map on both sides and v == t the cosine is 1.
  Rng rng(3);
  VgaParams p = VgaParams::random(VgaVariant::sim, 4, 4, rng);
  p.second = p.first;
  const auto x = rand_vec(rng, 4);
  const auto got = vga_sim(x, x, p);
  const auto ft = p.second(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], sigmoid(1.0) * ft[i], 1e-14);
}

TEST(Vga, DimensionErrors) {
  Rng rng(4);
  for (auto variant : {VgaVariant::soft, VgaVariant::fusion, VgaVariant::sim}) {
    const VgaParams p = VgaParams::random(variant, 5, 3, rng);
    EXPECT_THROW(vga(rand_vec(rng, 4), rand_vec(rng, 3), p), DimensionError);
    EXPECT_THROW(vga(rand_vec(rng, 5), rand_vec(rng, 2), p), DimensionError);
  }
}

class SplitGuide : public ::testing::TestWithParam<VgaVariant> {};

TEST_P(SplitGuide, MatchesDirectEvaluation) {
  Rng rng(5);
  const VgaParams p = VgaParams::random(GetParam(), 7, 5, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = rand_vec(rng, 7), t = rand_vec(rng, 5);
    const auto direct = vga(v, t, p);
    const auto split = apply_guide(p.variant, make_visual_guide(v, p), make_text_guide(t, p));
    EXPECT_LT(testutil::max_abs_diff(direct, split), 1e-13);
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, SplitGuide,
                         ::testing::Values(VgaVariant::soft, VgaVariant::fusion, VgaVariant::sim),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(DynamicFuse, NoKeywordsPinsGateToSentence) {
  Rng rng(6);
  const Linear gate = Linear::random(8, 4, rng);
  const auto s = rand_vec(rng, 4);
  EXPECT_EQ(dynamic_fuse(s, std::nullopt, gate), s);
}

TEST(DynamicFuse, ZeroGateAverages) {
  Rng rng(7);
  const auto s = rand_vec(rng, 4), k = rand_vec(rng, 4);
  const auto f = dynamic_fuse(s, std::span<const double>(k), Linear::zeros(8, 4));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(f[i], 0.5 * s[i] + 0.5 * k[i]);
}

TEST(DynamicFuse, SaturatedGates) {
  Rng rng(8);
  const auto s = rand_vec(rng, 3), k = rand_vec(rng, 3);
  Linear open = Linear::zeros(6, 3), shut = Linear::zeros(6, 3);
  open.bias.fill(50.0);
  shut.bias.fill(-50.0);
  EXPECT_LT(testutil::max_abs_diff(dynamic_fuse(s, std::span<const double>(k), open), s), 1e-15);
  EXPECT_LT(testutil::max_abs_diff(dynamic_fuse(s, std::span<const double>(k), shut), k), 1e-15);
}

TEST(DynamicFuse, GateSeesUnitVectorsOnly) {
  Rng rng(9);
  const Linear gate = Linear::random(6, 3, rng);
  const auto s = rand_vec(rng, 3), k = rand_vec(rng, 3);
  std::vector<double> s2 = s, k2 = k;
  for (double& x : s2) x *= 3.0;
  for (double& x : k2) x *= 3.0;
  const auto a = dynamic_fuse(s, std::span<const double>(k), gate);
  const auto b = dynamic_fuse(s2, std::span<const double>(k2), gate);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(b[i], 3.0 * a[i], 1e-13);
}

TEST(Similarity, CosineRangeAndDegenerate) {
  Rng rng(10);
  const ProjectionHeads h = ProjectionHeads::random(6, 4, 5, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const double s = similarity(rand_vec(rng, 6), rand_vec(rng, 5), h);
    ASSERT_GE(s, -1.0 - 1e-12);
    ASSERT_LE(s, 1.0 + 1e-12);
  }
  EXPECT_EQ(similarity(std::vector<double>(6, 0.0), rand_vec(rng, 5), h), 0.0);
  EXPECT_THROW(similarity(rand_vec(rng, 6), rand_vec(rng, 4), h), DimensionError);
}

TEST(Model, ScoreMatrixMatchesPairwiseScore) {
  for (auto variant : {VgaVariant::soft, VgaVariant::fusion, VgaVariant::sim}) {
    Vocabulary vocab;
    vocab.add_all(tokenize("a red tank on the pond near white tower"));
    const Model m = Model::create(testutil::tiny_config(variant), vocab);
    Rng rng(11);
    std::vector<std::vector<double>> visuals;
    for (int i = 0; i < 3; ++i) visuals.push_back(m.encode_image(rng.uniform_tensor({3, 64, 64}, 0.0, 1.0)));
    std::vector<TextFeatures> texts{m.encode_text(tokenize("a red tank"), {}),
                                    m.encode_text(tokenize("white tower near the pond"), {{"white", "tower"}}),
                                    m.encode_text({}, {{"pond"}, {"red"}})};
    const Tensor scores = score_matrix(m, visuals, texts);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(scores.at(i, j), m.score(visuals[i], texts[j]), 1e-12);
  }
}

TEST(Model, EncodeTextNeedsTokens) {
  Vocabulary vocab;
  const Model m = Model::create(testutil::tiny_config(VgaVariant::soft), vocab);
  EXPECT_THROW(m.encode_text({}, {}), ValidationError);
  const auto f = m.encode_text(tokenize("anything"), {});
  EXPECT_FALSE(f.keywords.has_value());
}

TEST(Model, ImageIsResizedToInput) {
  Vocabulary vocab;
  const Model m = Model::create(testutil::tiny_config(VgaVariant::soft), vocab);
  Rng rng(12);
  const auto v = m.encode_image(rng.uniform_tensor({3, 100, 80}, 0.0, 1.0));
  EXPECT_EQ(v.size(), m.config.visual_dim);
}

TEST(Model, CreationIsDeterministic) {
  Vocabulary vocab;
  vocab.add_all({"river", "road"});
  const Model a = Model::create(testutil::tiny_config(VgaVariant::fusion, 5), vocab);
  const Model b = Model::create(testutil::tiny_config(VgaVariant::fusion, 5), vocab);
  EXPECT_EQ(a.heads.visual, b.heads.visual);
  EXPECT_EQ(a.mvsa.mask_projection, b.mvsa.mask_projection);
  EXPECT_EQ(a.embedding.weights, b.embedding.weights);
  const Model c = Model::create(testutil::tiny_config(VgaVariant::fusion, 6), vocab);
  EXPECT_NE(a.heads.visual, c.heads.visual);
}
