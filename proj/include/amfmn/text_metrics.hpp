// SPDX-License-Identifier: Apache-2.0
//
// BLEU and METEOR used as a prior similarity between a caption and the
// reference captions of an image. The prior drives the dynamic margin.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "amfmn/text.hpp"

namespace amfmn {

namespace detail {

using NGramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NGramCounts ngram_counts(const TokenSeq& tokens, std::size_t n) {
  NGramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

}  // namespace detail

/// Multi-reference BLEU with clipped n-gram precisions and brevity penalty.
///
/// Orders above 1 with no clipped match are smoothed to 1/(total+1) as long as
/// some unigram matched; with no unigram match the score is 0. An empty
/// candidate scores 0.
inline double bleu(const TokenSeq& candidate, std::span<const TokenSeq> references, std::size_t max_n = 4) {
  if (references.empty()) throw ValidationError("bleu: at least one reference is required");
  if (candidate.empty() || max_n == 0) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = detail::ngram_counts(candidate, n);
    detail::NGramCounts max_ref;
    for (const auto& ref : references)
      for (const auto& [gram, c] : detail::ngram_counts(ref, n)) max_ref[gram] = std::max(max_ref[gram], c);

    std::size_t clipped = 0;
    for (const auto& [gram, c] : cand) {
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    const std::size_t total = candidate.size() >= n ? candidate.size() - n + 1 : 0;

    double precision;
    if (n == 1) {
      if (clipped == 0) return 0.0;
      precision = static_cast<double>(clipped) / static_cast<double>(total);
    } else if (clipped == 0) {
      precision = 1.0 / static_cast<double>(total + 1);
    } else {
      precision = static_cast<double>(clipped) / static_cast<double>(total);
    }
    log_sum += std::log(precision);
  }

  // Closest reference length; ties go to the shorter reference.
  const auto c = static_cast<long>(candidate.size());
  long r = static_cast<long>(references[0].size());
  for (const auto& ref : references) {
    const long len = static_cast<long>(ref.size());
    if (std::labs(len - c) < std::labs(r - c) || (std::labs(len - c) == std::labs(r - c) && len < r)) r = len;
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return std::clamp(bp * std::exp(log_sum / static_cast<double>(max_n)), 0.0, 1.0);
}

inline double bleu(const TokenSeq& candidate, const TokenSeq& reference, std::size_t max_n = 4) {
  return bleu(candidate, std::span<const TokenSeq>(&reference, 1), max_n);
}

struct MeteorParts {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

/// Exact-match METEOR. Each candidate token, left to right, claims the leftmost
/// unclaimed equal reference token.
inline MeteorParts meteor_parts(const TokenSeq& candidate, const TokenSeq& reference) {
  MeteorParts out;
  if (candidate.empty() || reference.empty()) return out;

  std::vector<bool> used(reference.size(), false);
  std::vector<long> align(candidate.size(), -1);
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (!used[j] && reference[j] == candidate[i]) {
        used[j] = true;
        align[i] = static_cast<long>(j);
        ++out.matches;
        break;
      }
    }
  }
  if (out.matches == 0) return out;

  long prev = -2;
  bool in_chunk = false;
  for (long a : align) {
    if (a < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || a != prev + 1) ++out.chunks;
    in_chunk = true;
    prev = a;
  }

  const double m = static_cast<double>(out.matches);
  out.precision = m / static_cast<double>(candidate.size());
  out.recall = m / static_cast<double>(reference.size());
  out.fmean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
  const double frag = static_cast<double>(out.chunks) / m;
  out.penalty = 0.5 * frag * frag * frag;
  out.score = std::clamp(out.fmean * (1.0 - out.penalty), 0.0, 1.0);
  return out;
}

inline double meteor(const TokenSeq& candidate, const TokenSeq& reference) {
  return meteor_parts(candidate, reference).score;
}

inline constexpr double kDefaultBleuWeight = 0.5;

/// S(T, T_I): weighted BLEU against all references plus the best single-reference
/// METEOR. A text that equals one of the references scores exactly 1.
inline double prior_similarity(const TokenSeq& text, std::span<const TokenSeq> references,
                               double bleu_weight = kDefaultBleuWeight) {
  if (references.empty()) throw ValidationError("prior_similarity: empty reference set");
  if (!(bleu_weight >= 0.0 && bleu_weight <= 1.0)) {
    throw ValidationError("prior_similarity: BLEU weight must lie in [0,1]");
  }
  if (text.empty()) return 0.0;
  if (std::find(references.begin(), references.end(), text) != references.end()) return 1.0;
  double best_meteor = 0.0;
  for (const auto& ref : references) best_meteor = std::max(best_meteor, meteor(text, ref));
  const double s = bleu_weight * bleu(text, references) + (1.0 - bleu_weight) * best_meteor;
  return std::clamp(s, 0.0, 1.0);
}

}  // namespace amfmn
