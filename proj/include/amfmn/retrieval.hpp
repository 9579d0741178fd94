// SPDX-License-Identifier: Apache-2.0
//
// Ranking, R@K / mR and evaluation of a model in the three query modes.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "amfmn/dataset.hpp"
#include "amfmn/model.hpp"

namespace amfmn {

/// Corpus indices by descending score; equal scores keep ascending index order.
inline std::vector<std::size_t> rank(std::span<const double> row) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return order;
}

/// Retrieval problem: scores[q][c] for Q queries over C corpus items, and the
/// corpus indices that count as correct for each query.
struct SimilarityMatrix {
  Tensor scores;
  std::vector<std::vector<std::size_t>> truth;

  void validate() const {
    if (scores.rank() != 2) throw DimensionError("similarity matrix must be 2-D");
    if (truth.size() != scores.extent(0)) throw DimensionError("ground truth does not cover every query");
    for (const auto& t : truth) {
      if (t.empty()) throw ValidationError("every query needs at least one ground-truth item");
      for (std::size_t c : t)
        if (c >= scores.extent(1)) throw DimensionError("ground-truth index outside the corpus");
    }
    if (!scores.all_finite()) throw ValidationError("similarity scores must be finite");
  }
};

/// 1-based rank of the best-placed ground-truth item for each query.
inline std::vector<std::size_t> first_hit_ranks(const SimilarityMatrix& m) {
  m.validate();
  const std::size_t corpus = m.scores.extent(1);
  std::vector<std::size_t> out(m.truth.size());
  for (std::size_t q = 0; q < m.truth.size(); ++q) {
    const auto order = rank(m.scores.values().subspan(q * corpus, corpus));
    std::vector<std::size_t> position(corpus);
    for (std::size_t r = 0; r < corpus; ++r) position[order[r]] = r + 1;
    std::size_t best = corpus;
    for (std::size_t c : m.truth[q]) best = std::min(best, position[c]);
    out[q] = best;
  }
  return out;
}

/// Fraction of queries with a ground-truth item in the top K. K above the
/// corpus size is clamped.
inline double recall_at_k(const SimilarityMatrix& m, std::size_t k) {
  if (k == 0) throw ValidationError("recall_at_k: K must be at least 1");
  k = std::min(k, m.scores.extent(1));
  const auto ranks = first_hit_ranks(m);
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

struct RecallReport {
  // Text retrieval: image queries over captions. Image retrieval: caption
  // queries over images.
  double text_r1 = 0, text_r5 = 0, text_r10 = 0;
  double image_r1 = 0, image_r5 = 0, image_r10 = 0;

  std::array<double, 6> values() const { return {text_r1, text_r5, text_r10, image_r1, image_r5, image_r10}; }
};

inline double mean_recall(const std::array<double, 6>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s / 6.0;
}

inline double mean_recall(const RecallReport& r) { return mean_recall(r.values()); }

/// Builds both retrieval directions from an [images x captions] score matrix.
/// caption_image[j] is the image described by caption j.
inline RecallReport recall_report(const Tensor& image_caption_scores, std::span<const std::size_t> caption_image) {
  const std::size_t n_img = image_caption_scores.extent(0), n_cap = image_caption_scores.extent(1);
  if (caption_image.size() != n_cap) throw DimensionError("recall_report: caption-image map does not match scores");

  SimilarityMatrix text_dir{image_caption_scores, std::vector<std::vector<std::size_t>>(n_img)};
  for (std::size_t j = 0; j < n_cap; ++j) text_dir.truth.at(caption_image[j]).push_back(j);

  SimilarityMatrix image_dir{Tensor({n_cap, n_img}), {}};
  for (std::size_t j = 0; j < n_cap; ++j) {
    for (std::size_t i = 0; i < n_img; ++i) image_dir.scores.at(j, i) = image_caption_scores.at(i, j);
    image_dir.truth.push_back({caption_image[j]});
  }

  const auto tr = first_hit_ranks(text_dir);
  const auto ir = first_hit_ranks(image_dir);
  const auto frac = [](const std::vector<std::size_t>& ranks, std::size_t k, std::size_t corpus) {
    k = std::min(k, corpus);
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t r) { return r <= k; });
    return ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size());
  };
  RecallReport r;
  r.text_r1 = frac(tr, 1, n_cap);
  r.text_r5 = frac(tr, 5, n_cap);
  r.text_r10 = frac(tr, 10, n_cap);
  r.image_r1 = frac(ir, 1, n_img);
  r.image_r5 = frac(ir, 5, n_img);
  r.image_r10 = frac(ir, 10, n_img);
  return r;
}

// ---------------------------------------------------------------------------
// Query modes

enum class QueryMode { sentence, keywords, joint };

inline QueryMode parse_query_mode(std::string_view s) {
  if (s == "sentence") return QueryMode::sentence;
  if (s == "keywords") return QueryMode::keywords;
  if (s == "joint") return QueryMode::joint;
  throw ValidationError("unknown mode '" + std::string(s) + "' (expected sentence, keywords or joint)");
}

inline std::string_view to_string(QueryMode m) {
  switch (m) {
    case QueryMode::sentence: return "sentence";
    case QueryMode::keywords: return "keywords";
    case QueryMode::joint: return "joint";
  }
  return "?";
}

/// Sentence mode keeps the sentence tokens found in the keyword vocabulary as
/// single-token keyword phrases.
inline std::vector<TokenSeq> keywords_from_sentence(const TokenSeq& sentence,
                                                    const std::set<std::string>& keyword_vocab) {
  std::vector<TokenSeq> out;
  for (const auto& t : sentence)
    if (keyword_vocab.count(t)) out.push_back({t});
  return out;
}

inline TextFeatures encode_query(const Model& model, const std::string& sentence,
                                 const std::vector<std::string>& keywords, QueryMode mode,
                                 const std::set<std::string>& keyword_vocab) {
  std::vector<TokenSeq> phrases;
  for (const auto& k : keywords) phrases.push_back(tokenize(k));
  switch (mode) {
    case QueryMode::sentence: {
      const auto tokens = tokenize(sentence);
      return model.encode_text(tokens, keywords_from_sentence(tokens, keyword_vocab));
    }
    case QueryMode::keywords:
      if (phrases.empty()) throw ValidationError("keywords mode needs keywords");
      return model.encode_text({}, phrases);
    case QueryMode::joint: return model.encode_text(tokenize(sentence), phrases);
  }
  throw std::logic_error("unreachable");
}

/// Encoded images and captions of a set of dataset entries.
struct EncodedSplit {
  std::vector<std::vector<double>> visuals;  // per image
  std::vector<TextFeatures> texts;           // per caption, image-major
  std::vector<std::size_t> caption_image;
};

inline EncodedSplit encode_texts(const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                                 QueryMode mode, std::vector<std::vector<double>> visuals) {
  const auto kv = ds.keyword_vocabulary();
  EncodedSplit out;
  out.visuals = std::move(visuals);
  for (std::size_t local = 0; local < indices.size(); ++local) {
    const auto& e = ds.entries.at(indices[local]);
    for (const auto& s : e.sentences) {
      out.texts.push_back(encode_query(model, s, e.keywords, mode, kv));
      out.caption_image.push_back(local);
    }
  }
  return out;
}

inline std::vector<std::vector<double>> encode_images(const Model& model, const Dataset& ds,
                                                      std::span<const std::size_t> indices) {
  std::vector<std::vector<double>> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(model.encode_source(ds.image_path(i)));
  return out;
}

inline EncodedSplit encode_split(const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                                 QueryMode mode) {
  return encode_texts(model, ds, indices, mode, encode_images(model, ds, indices));
}

inline RecallReport evaluate(const Model& model, const EncodedSplit& split) {
  return recall_report(score_matrix(model, split.visuals, split.texts), split.caption_image);
}

inline RecallReport evaluate(const Model& model, const Dataset& ds, std::span<const std::size_t> indices,
                             QueryMode mode) {
  if (indices.empty()) throw ValidationError("evaluate: empty split");
  return evaluate(model, encode_split(model, ds, indices, mode));
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Seeded 80/10/10 split over images. Each part gets at least one image when
/// the dataset has three or more.
inline Split make_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed ^ 0x5EED5EEDull);
  rng.shuffle(order);
  std::size_t n_val = n / 10, n_test = n / 10;
  if (n >= 3) {
    n_val = std::max<std::size_t>(n_val, 1);
    n_test = std::max<std::size_t>(n_test, 1);
  }
  Split s;
  s.train.assign(order.begin(), order.end() - static_cast<long>(n_val + n_test));
  s.val.assign(order.end() - static_cast<long>(n_val + n_test), order.end() - static_cast<long>(n_test));
  s.test.assign(order.end() - static_cast<long>(n_test), order.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

/// FNV-1a over the index list; identifies a split in reports.
inline std::string split_hash(std::span<const std::size_t> indices) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i : indices) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(i) >> (8 * b)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace amfmn
