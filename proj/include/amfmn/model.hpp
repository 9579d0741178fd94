// SPDX-License-Identifier: Apache-2.0
//
// The full matching network: seeded encoders, MVSA, VGA and projection heads.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amfmn/fusion.hpp"
#include "amfmn/pnm.hpp"
#include "amfmn/text.hpp"
#include "amfmn/visual.hpp"

namespace amfmn {

struct ModelConfig {
  VgaVariant variant = VgaVariant::soft;
  std::size_t image_size = 256;
  ChannelPlan channels{4, 8, 16, 32, 64};
  std::size_t visual_dim = 512;  // D_v, length of v^(g) and F_v
  std::size_t word_dim = 300;
  std::size_t hidden = 512;      // GRU hidden size, D_t
  std::size_t joint_dim = 512;   // D_f
  std::size_t low_channels = 16;
  std::size_t high_channels = 16;
  std::size_t info_channels = 8;
  std::uint64_t seed = 1;

  void validate() const {
    if (image_size == 0 || image_size % 32 != 0) throw ValidationError("image size must be a positive multiple of 32");
    for (std::size_t c : channels)
      if (c == 0) throw ValidationError("channel plan entries must be positive");
    if (!visual_dim || !word_dim || !hidden || !joint_dim || !low_channels || !high_channels || !info_channels) {
      throw ValidationError("model dimensions must be positive");
    }
  }

  /// Spatial size of the stage-4 map (and of v-hat^(i)).
  std::size_t mask_spatial() const {
    const std::size_t side = image_size / 16;
    return side * side;
  }
};

/// Encoded caption: pooled sentence state and, when keywords are present, the
/// keyword vector.
struct TextFeatures {
  std::vector<double> sentence;
  std::optional<std::vector<double>> keywords;
};

struct Model {
  ModelConfig config;
  Vocabulary vocab;
  EmbeddingTable embedding;
  GruParams gru;
  Mlp keyword_mlp;
  ExtractorParams extractor;
  MvsaParams mvsa;
  VgaParams vga;
  ProjectionHeads heads;

  static Model create(const ModelConfig& config, Vocabulary vocab) {
    config.validate();
    Model m;
    m.config = config;
    m.vocab = std::move(vocab);
    Rng root(config.seed);
    Rng r_embed = root.fork(1), r_gru = root.fork(2), r_mlp = root.fork(3), r_ext = root.fork(4),
        r_mvsa = root.fork(5), r_vga = root.fork(6), r_heads = root.fork(7);
    m.embedding = EmbeddingTable::random(m.vocab.size(), config.word_dim, r_embed);
    m.gru = {GruDirection::random(config.word_dim, config.hidden, r_gru),
             GruDirection::random(config.word_dim, config.hidden, r_gru)};
    m.keyword_mlp = Mlp::random(config.hidden, config.hidden, config.hidden, r_mlp);
    m.extractor = ExtractorParams::random(config.channels, config.visual_dim, r_ext);
    const auto& c = config.channels;
    m.mvsa = MvsaParams::random(c[0] + c[1] + c[2], c[3] + c[4], config.low_channels, config.high_channels,
                                config.info_channels, config.mask_spatial(), config.visual_dim, r_mvsa);
    m.vga = VgaParams::random(config.variant, config.visual_dim, config.hidden, r_vga);
    m.heads = ProjectionHeads::random(config.visual_dim, config.hidden, config.joint_dim, r_heads);
    return m;
  }

  MvsaOutput encode_pyramid(const FeaturePyramid& pyramid) const { return mvsa_forward(pyramid, mvsa); }

  FeaturePyramid pyramid_of(const Tensor& image) const {
    const Tensor input = resize_nearest(image, config.image_size, config.image_size);
    return extract_pyramid(input, extractor);
  }

  /// F_v for an image tensor (resized to the model input first).
  std::vector<double> encode_image(const Tensor& image) const {
    return encode_pyramid(pyramid_of(image)).salient.features;
  }

  /// Loads an image source: a feature bundle (.xfb) or a PGM/PPM file.
  std::vector<double> encode_source(const std::string& path) const {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".xfb") == 0) {
      return encode_pyramid(load_pyramid(path)).salient.features;
    }
    return encode_image(read_pnm(path));
  }

  /// Keywords-only input is joined into a pseudo-sentence for the sentence branch.
  TextFeatures encode_text(const TokenSeq& sentence, const std::vector<TokenSeq>& keywords) const {
    TokenSeq words = sentence;
    if (words.empty())
      for (const auto& k : keywords) words.insert(words.end(), k.begin(), k.end());
    if (words.empty()) throw ValidationError("encode_text: query has neither sentence nor keyword tokens");
    TextFeatures f;
    f.sentence = bigru_encode(words, vocab, embedding, gru).pooled;
    if (auto k = encode_keywords(keywords, vocab, embedding, gru, keyword_mlp)) f.keywords = std::move(k->pooled);
    return f;
  }

  /// Projected text embedding for one (image, text) pair; the text branch is
  /// guided by the image's F_v.
  std::vector<double> text_embedding(std::span<const double> visual, const TextFeatures& text) const {
    const auto s = amfmn::vga(visual, text.sentence, vga);
    if (!text.keywords) return project_text(s, std::nullopt, heads);
    const auto k = amfmn::vga(visual, *text.keywords, vga);
    return project_text(s, std::span<const double>(k), heads);
  }

  JointEmbedding embed_pair(std::span<const double> visual, const TextFeatures& text) const {
    return make_joint(matvec(heads.visual, visual), text_embedding(visual, text));
  }

  double score(std::span<const double> visual, const TextFeatures& text) const {
    return similarity(visual, text_embedding(visual, text), heads);
  }
};

/// Full pipeline for one image and one caption.
inline JointEmbedding encode_pair(const Tensor& image, const TokenSeq& sentence, const std::vector<TokenSeq>& keywords,
                                  const Model& model) {
  const auto visual = model.encode_image(image);
  return model.embed_pair(visual, model.encode_text(sentence, keywords));
}

/// Guided (pre-projection) text vectors for every (image, text) pair, stored
/// row-major by image.
struct GuidedPairs {
  std::size_t images = 0;
  std::size_t texts = 0;
  std::vector<std::vector<double>> sentence;
  std::vector<std::vector<double>> keyword;  // empty vector when the text has no keywords
  std::vector<bool> has_keywords;            // per text

  std::size_t index(std::size_t image, std::size_t text) const { return image * texts + text; }
};

inline GuidedPairs guide_pairs(const VgaParams& vga, std::span<const std::vector<double>> visuals,
                               std::span<const TextFeatures> texts) {
  GuidedPairs g;
  g.images = visuals.size();
  g.texts = texts.size();
  g.sentence.resize(g.images * g.texts);
  g.keyword.resize(g.images * g.texts);
  g.has_keywords.resize(g.texts);
  std::vector<VisualGuide> vg;
  vg.reserve(visuals.size());
  for (const auto& v : visuals) vg.push_back(make_visual_guide(v, vga));
  std::vector<TextGuide> sg, kg(texts.size());
  sg.reserve(texts.size());
  for (std::size_t j = 0; j < texts.size(); ++j) {
    sg.push_back(make_text_guide(texts[j].sentence, vga));
    g.has_keywords[j] = texts[j].keywords.has_value();
    if (texts[j].keywords) kg[j] = make_text_guide(*texts[j].keywords, vga);
  }
  for (std::size_t i = 0; i < g.images; ++i) {
    for (std::size_t j = 0; j < g.texts; ++j) {
      g.sentence[g.index(i, j)] = apply_guide(vga.variant, vg[i], sg[j]);
      if (g.has_keywords[j]) g.keyword[g.index(i, j)] = apply_guide(vga.variant, vg[i], kg[j]);
    }
  }
  return g;
}

/// scores[i][j] = similarity of image i and text j.
inline Tensor score_matrix(const ProjectionHeads& heads, std::span<const std::vector<double>> visuals,
                           const GuidedPairs& guided) {
  Tensor scores({guided.images, guided.texts});
  for (std::size_t i = 0; i < guided.images; ++i) {
    const auto image = matvec(heads.visual, visuals[i]);
    for (std::size_t j = 0; j < guided.texts; ++j) {
      const std::size_t p = guided.index(i, j);
      const auto text = guided.has_keywords[j]
                            ? project_text(guided.sentence[p], std::span<const double>(guided.keyword[p]), heads)
                            : project_text(guided.sentence[p], std::nullopt, heads);
      scores.at(i, j) = cosine(image, text);
    }
  }
  return scores;
}

inline Tensor score_matrix(const Model& model, std::span<const std::vector<double>> visuals,
                           std::span<const TextFeatures> texts) {
  return score_matrix(model.heads, visuals, guide_pairs(model.vga, visuals, texts));
}

}  // namespace amfmn
