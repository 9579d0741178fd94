// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "amfmn/visual.hpp"
#include "test_util.hpp"

using namespace amfmn;

namespace {

const ChannelPlan kPlan{4, 8, 16, 32, 64};

FeaturePyramid seeded_pyramid(std::uint64_t seed, std::size_t size = 64) {
  Rng rng(seed);
  const ExtractorParams ex = ExtractorParams::random(kPlan, 12, rng);
  const Tensor image = rng.uniform_tensor({3, size, size}, 0.0, 1.0);
  return extract_pyramid(image, ex);
}

MvsaParams seeded_mvsa(std::uint64_t seed) {
  Rng rng(seed);
  // Stage 4 of a 64-pixel image is 4x4, so the filtered map holds 3 x 4 x 4.
  return MvsaParams::random(28, 96, 5, 7, 3, 16, 12, rng);
}

}  // namespace

TEST(Extractor, StageExtents) {
  const FeaturePyramid p = seeded_pyramid(1, 96);
  const std::size_t expect[5] = {48, 24, 12, 6, 3};
  for (std::size_t m = 0; m < kPyramidStages; ++m) {
    EXPECT_EQ(p.stages[m].shape(), (Shape{kPlan[m], expect[m], expect[m]})) << m;
  }
  EXPECT_EQ(p.global.size(), 12u);
}

TEST(Extractor, RejectsBadImages) {
  Rng rng(2);
  const ExtractorParams ex = ExtractorParams::random(kPlan, 12, rng);
  EXPECT_THROW(extract_pyramid(Tensor({3, 48, 64}), ex), ValidationError);
  EXPECT_THROW(extract_pyramid(Tensor({1, 64, 64}), ex), ValidationError);
  EXPECT_THROW(extract_pyramid(Tensor({64, 64}), ex), ValidationError);
}

TEST(Extractor, ZeroBiasZeroImageGivesZeroPyramid) {
  Rng rng(3);
  ExtractorParams ex = ExtractorParams::random(kPlan, 12, rng);
  for (auto& b : ex.biases) b.fill(0.0);
  const FeaturePyramid p = extract_pyramid(Tensor({3, 64, 64}), ex);
  for (const auto& s : p.stages)
    for (double v : s.values()) ASSERT_EQ(v, 0.0);
  for (double v : p.global) EXPECT_EQ(v, 0.0);
}

TEST(Extractor, Deterministic) { EXPECT_EQ(seeded_pyramid(4), seeded_pyramid(4)); }

TEST(FeatureBundle, RoundTrip) {
  const FeaturePyramid p = seeded_pyramid(5);
  std::stringstream ss;
  save_pyramid(ss, p);
  EXPECT_EQ(load_pyramid(ss), p);
}

TEST(FeatureBundle, RejectsCorruption) {
  std::stringstream ss;
  save_pyramid(ss, seeded_pyramid(6));
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_pyramid(cut), FormatError);
  bytes[0] = 'Y';
  std::stringstream magic(bytes);
  EXPECT_THROW(load_pyramid(magic), FormatError);
  EXPECT_THROW(load_pyramid(std::string("/nonexistent/bundle.xfbn")), IoError);
}

TEST(LowHigh, ExtentsAndChannels) {
  const FeaturePyramid p = seeded_pyramid(7);
  const LowHigh lh = build_low_high(p);
  EXPECT_EQ(lh.low.shape(), (Shape{28, 8, 8}));
  EXPECT_EQ(lh.high.shape(), (Shape{96, 4, 4}));
  // Stage 3 is copied unchanged into the tail of the low map.
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t i = 0; i < 64; ++i) ASSERT_EQ(lh.low[(12 + c) * 64 + i], p.stages[2][c * 64 + i]);
  // Stage 5 is upsampled by nearest neighbour.
  EXPECT_EQ(lh.high.at(32, 0, 0), p.stages[4].at(0, 0, 0));
  EXPECT_EQ(lh.high.at(32, 1, 1), p.stages[4].at(0, 0, 0));
  EXPECT_EQ(lh.high.at(32, 3, 2), p.stages[4].at(0, 1, 1));
}

TEST(Mvsa, ResidualSurvivesZeroPaths) {
  const FeaturePyramid p = seeded_pyramid(8);
  const LowHigh lh = build_low_high(p);
  MvsaParams zero = MvsaParams::zeros(28, 96, 5, 7, 3, 16, 12);
  const Tensor joint = multiscale_fuse(lh.low, lh.high, zero);
  const Tensor mean = mean_channel(lh.high);
  ASSERT_EQ(joint.shape(), (Shape{12, 4, 4}));
  for (std::size_t c = 0; c < 12; ++c)
    for (std::size_t i = 0; i < 16; ++i) ASSERT_NEAR(joint[c * 16 + i], mean[i], 1e-15);
}

TEST(Mvsa, ScalePathsAreIndependent) {
  const LowHigh lh = build_low_high(seeded_pyramid(9));
  MvsaParams a = seeded_mvsa(10);
  MvsaParams b = a;
  b.low_kernels = Rng(99).normal_tensor(a.low_kernels.shape(), 1.0);
  const Tensor ja = multiscale_fuse(lh.low, lh.high, a);
  const Tensor jb = multiscale_fuse(lh.low, lh.high, b);
  // Channels 5..11 come from the high path only.
  for (std::size_t c = 5; c < 12; ++c)
    for (std::size_t i = 0; i < 16; ++i) ASSERT_EQ(ja[c * 16 + i], jb[c * 16 + i]);
  EXPECT_GT(testutil::max_abs_diff(ja.values(), jb.values()), 1e-6);
}

TEST(Mvsa, RejectsMismatchedMaps) {
  const MvsaParams p = seeded_mvsa(11);
  EXPECT_THROW(multiscale_fuse(Tensor({28, 8, 8}), Tensor({96, 8, 8}), p), DimensionError);
}

TEST(Mvsa, GateSaturatesClosed) {
  const LowHigh lh = build_low_high(seeded_pyramid(12));
  MvsaParams p = seeded_mvsa(13);
  p.gate_bias.fill(-20.0);
  p.gate_kernels.fill(0.0);
  const Tensor joint = multiscale_fuse(lh.low, lh.high, p);
  const FilteredFeatures f = redundancy_filter(joint, p);
  for (std::size_t i = 0; i < f.filtered.size(); ++i) {
    ASSERT_LE(std::abs(f.filtered[i]), 1e-8 * std::max(1.0, std::abs(f.info[i])));
  }
}

TEST(Mvsa, FilterIsScaleInvariant) {
  // Per-pixel L2 normalization removes any positive rescaling of the input.
  const LowHigh lh = build_low_high(seeded_pyramid(14));
  const MvsaParams p = seeded_mvsa(15);
  const Tensor joint = multiscale_fuse(lh.low, lh.high, p);
  Tensor scaled = joint;
  for (double& v : scaled.values()) v *= 7.5;
  EXPECT_LT(testutil::max_abs_diff(redundancy_filter(joint, p).filtered.values(),
                                   redundancy_filter(scaled, p).filtered.values()),
            1e-12);
}

TEST(Mvsa, MaskInUnitIntervalAndScalesGlobal) {
  const FeaturePyramid pyr = seeded_pyramid(16);
  const MvsaOutput out = mvsa_forward(pyr, seeded_mvsa(17));
  ASSERT_EQ(out.salient.mask.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_GT(out.salient.mask[i], 0.0);
    EXPECT_LT(out.salient.mask[i], 1.0);
    EXPECT_DOUBLE_EQ(out.salient.features[i], pyr.global[i] * out.salient.mask[i]);
  }
  EXPECT_EQ(out.spatial.shape(), (Shape{3, 4, 4}));
}

TEST(Mvsa, MaskProjectionShapeChecked) {
  const FeaturePyramid pyr = seeded_pyramid(18);
  MvsaParams p = seeded_mvsa(19);
  p.mask_projection = Tensor({12, 5});
  EXPECT_THROW(mvsa_forward(pyr, p), DimensionError);
}

TEST(Mvsa, ZeroMaskProjectionHalvesGlobal) {
  const FeaturePyramid pyr = seeded_pyramid(20);
  MvsaParams p = seeded_mvsa(21);
  p.mask_projection.fill(0.0);
  const MvsaOutput out = mvsa_forward(pyr, p);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(out.salient.features[i], 0.5 * pyr.global[i]);
}
