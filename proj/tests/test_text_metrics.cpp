// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "amfmn/dataset.hpp"
#include "amfmn/text_metrics.hpp"
#include "test_util.hpp"

using namespace amfmn;

// Values from tests/oracles/oracles.py (exact rational n-gram arithmetic,
// 50-digit logs).
namespace frozen {
constexpr double kBleuCat = 0.42044820762685727152;
constexpr double kMeteorCat0 = 0.80666666666666666667;
constexpr double kMeteorCat1 = 0.28985507246376811594;
constexpr double kPriorCat = 0.61355743714676196909;
constexpr double kMeteorOneShared = 0.12820512820512820513;
constexpr double kPriorFixture[5] = {0.51857467803525622584, 0.4677757216273382632, 0.49215205598154211135,
                                     0.56015518352292608626, 0.51304746106080686397};
constexpr double kBleuFixture1 = 0.28646290158800985974;
constexpr double kMeteorFixture3 = 0.67948717948717948718;
}  // namespace frozen

namespace {
std::vector<TokenSeq> toks(std::initializer_list<const char*> texts) {
  std::vector<TokenSeq> out;
  for (const char* t : texts) out.push_back(tokenize(t));
  return out;
}

std::vector<TokenSeq> fixture_refs(fixture::Scene s) {
  std::vector<TokenSeq> out;
  for (const auto& c : fixture::full_captions(s)) out.push_back(tokenize(c));
  return out;
}
}  // namespace

TEST(Bleu, IdentityAndDisjoint) {
  const TokenSeq c = tokenize("two white storage tanks near a road");
  EXPECT_DOUBLE_EQ(bleu(c, c), 1.0);
  EXPECT_EQ(bleu(c, tokenize("green meadow with trees")), 0.0);
  EXPECT_EQ(bleu({}, c), 0.0);
  EXPECT_THROW(bleu(c, std::span<const TokenSeq>{}), ValidationError);
}

TEST(Bleu, ShortIdentityStillOne) {
  // Orders longer than the sentence contribute a neutral factor.
  const TokenSeq c = tokenize("pond");
  EXPECT_DOUBLE_EQ(bleu(c, c), 1.0);
}

TEST(Bleu, MatchesOracle) {
  const auto refs = toks({"The cat is on the mat.", "There is a cat on the mat."});
  const TokenSeq cat = tokenize("The cat sat on the mat.");
  EXPECT_NEAR(bleu(cat, refs), frozen::kBleuCat, 1e-14);
  EXPECT_NEAR(bleu(cat, refs[0]), frozen::kBleuCat, 1e-14);
}

TEST(Bleu, InvariantToReferenceOrder) {
  auto refs = toks({"a red tank on the pond", "the pond surrounds one red tank", "a tank painted red"});
  const TokenSeq c = tokenize("a red tank near the pond");
  const double base = bleu(c, refs);
  std::sort(refs.begin(), refs.end());
  do {
    EXPECT_DOUBLE_EQ(bleu(c, refs), base);
  } while (std::next_permutation(refs.begin(), refs.end()));
}

TEST(Bleu, BrevityPenaltyPrefersShorterOnTies) {
  const TokenSeq c = tokenize("a b c d");
  const auto refs = toks({"a b c d e f", "a b"});  // both at distance 2
  // Closest length resolves to 2 (shorter), so no penalty applies.
  const double with_tie = bleu(c, refs);
  const double only_long = bleu(c, toks({"a b c d e f"}));
  EXPECT_GT(with_tie, only_long);
}

TEST(Meteor, Examples) {
  const TokenSeq four = tokenize("a b c d");
  EXPECT_DOUBLE_EQ(meteor(four, four), 1.0 - 1.0 / 128.0);
  EXPECT_EQ(meteor(tokenize("x y"), tokenize("p q")), 0.0);

  // One shared token: m = 1, one chunk, penalty 0.5.
  const auto parts = meteor_parts(tokenize("x a y"), tokenize("a q r s"));
  EXPECT_EQ(parts.matches, 1u);
  EXPECT_EQ(parts.chunks, 1u);
  EXPECT_DOUBLE_EQ(parts.penalty, 0.5);
  EXPECT_DOUBLE_EQ(parts.score, 0.5 * parts.fmean);
  EXPECT_NEAR(parts.score, frozen::kMeteorOneShared, 1e-15);
}

TEST(Meteor, MatchesOracle) {
  const auto refs = toks({"The cat is on the mat.", "There is a cat on the mat."});
  const TokenSeq cat = tokenize("The cat sat on the mat.");
  EXPECT_NEAR(meteor(cat, refs[0]), frozen::kMeteorCat0, 1e-15);
  EXPECT_NEAR(meteor(cat, refs[1]), frozen::kMeteorCat1, 1e-15);
}

TEST(Meteor, RangeOnRandomSentences) {
  Rng rng(17);
  const std::vector<std::string> words{"a", "red", "tank", "on", "the", "pond", "road", "near"};
  for (int trial = 0; trial < 300; ++trial) {
    TokenSeq a, b;
    for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) a.push_back(words[rng.below(words.size())]);
    for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) b.push_back(words[rng.below(words.size())]);
    const double m = meteor(a, b), bl = bleu(a, b);
    ASSERT_GE(m, 0.0);
    ASSERT_LE(m, 1.0);
    ASSERT_GE(bl, 0.0);
    ASSERT_LE(bl, 1.0);
  }
}

TEST(Prior, IdentityAndDisjoint) {
  const auto refs = toks({"a red tank", "the tank is red", "red tank on pond", "pond with tank", "one tank"});
  EXPECT_EQ(prior_similarity(refs[2], refs), 1.0);
  EXPECT_EQ(prior_similarity(tokenize("green meadow"), refs), 0.0);
  EXPECT_EQ(prior_similarity({}, refs), 0.0);
  EXPECT_THROW(prior_similarity(refs[0], refs, 1.5), ValidationError);
}

TEST(Prior, MatchesOracle) {
  const auto refs = toks({"The cat is on the mat.", "There is a cat on the mat."});
  EXPECT_NEAR(prior_similarity(tokenize("The cat sat on the mat."), refs), frozen::kPriorCat, 1e-14);
}

TEST(Prior, FixtureCaptionsMatchOracle) {
  const auto a = fixture_refs({0, 0, 0, 0});  // red building on meadow, north west
  const auto b = fixture_refs({1, 0, 1, 3});  // red tank on pond, south east
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(prior_similarity(a[k], b), frozen::kPriorFixture[k], 1e-14) << k;
  EXPECT_NEAR(bleu(a[1], b), frozen::kBleuFixture1, 1e-14);
  EXPECT_NEAR(meteor(a[3], b[3]), frozen::kMeteorFixture3, 1e-15);
}

TEST(Prior, PermutationInvariant) {
  auto refs = fixture_refs({2, 1, 3, 2});
  const TokenSeq t = tokenize("a white tower near the desert");
  const double base = prior_similarity(t, refs);
  std::sort(refs.begin(), refs.end());
  int perms = 0;
  do {
    ASSERT_DOUBLE_EQ(prior_similarity(t, refs), base);
    ++perms;
  } while (std::next_permutation(refs.begin(), refs.end()));
  EXPECT_EQ(perms, 120);
}
