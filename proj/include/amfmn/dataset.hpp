// SPDX-License-Identifier: Apache-2.0
//
// Image-caption dataset records (five sentences and one to five keyword
// phrases per image), JSONL persistence, quality diagnostics and the seeded
// synthetic fixture.
#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amfmn/pnm.hpp"
#include "amfmn/text_metrics.hpp"

namespace amfmn {

inline constexpr std::size_t kSentencesPerImage = 5;
inline constexpr std::size_t kMaxKeywords = 5;

struct DatasetEntry {
  std::string id;
  std::string image;  // path relative to the dataset root: PGM/PPM or .xfb bundle
  std::string category;
  std::vector<std::string> sentences;
  std::vector<std::string> keywords;

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;

  std::vector<TokenSeq> keyword_tokens() const {
    std::vector<TokenSeq> out;
    for (const auto& k : keywords) out.push_back(tokenize(k));
    return out;
  }
};

inline void to_json(nlohmann::ordered_json& j, const DatasetEntry& e) {
  j = nlohmann::ordered_json{{"id", e.id},
                             {"image", e.image},
                             {"category", e.category},
                             {"sentences", e.sentences},
                             {"keywords", e.keywords}};
}

struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t caption_count() const { return entries.size() * kSentencesPerImage; }

  std::string image_path(std::size_t i) const {
    const std::filesystem::path p(entries.at(i).image);
    return (p.is_absolute() ? p : root / p).string();
  }

  /// Tokens that occur in any keyword phrase.
  std::set<std::string> keyword_vocabulary() const {
    std::set<std::string> out;
    for (const auto& e : entries)
      for (const auto& k : e.keyword_tokens()) out.insert(k.begin(), k.end());
    return out;
  }

  Vocabulary build_vocabulary() const {
    Vocabulary v;
    for (const auto& e : entries) {
      for (const auto& s : e.sentences) v.add_all(tokenize(s));
      for (const auto& k : e.keyword_tokens()) v.add_all(k);
    }
    return v;
  }
};

inline std::string validate_entry(const DatasetEntry& e) {
  if (e.id.empty()) return "empty id";
  if (e.image.empty()) return "empty image path";
  if (e.category.empty()) return "empty category";
  if (e.sentences.size() != kSentencesPerImage) {
    return "expected " + std::to_string(kSentencesPerImage) + " sentences, found " + std::to_string(e.sentences.size());
  }
  for (const auto& s : e.sentences)
    if (tokenize(s).empty()) return "sentence without word tokens";
  if (e.keywords.empty() || e.keywords.size() > kMaxKeywords) {
    return "expected 1-5 keywords, found " + std::to_string(e.keywords.size());
  }
  for (const auto& k : e.keywords)
    if (tokenize(k).empty()) return "keyword without word tokens";
  return {};
}

/// Reads dataset.jsonl (or the given .jsonl file). All invalid lines are
/// collected into one ValidationError.
inline Dataset load_dataset(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / "dataset.jsonl";
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read dataset " + file.string());

  Dataset ds;
  ds.root = file.parent_path();
  std::vector<std::string> problems;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = file.filename().string() + ":" + std::to_string(line_no) + ": ";
    DatasetEntry e;
    try {
      const auto j = nlohmann::json::parse(line);
      e.id = j.at("id").get<std::string>();
      e.image = j.at("image").get<std::string>();
      e.category = j.at("category").get<std::string>();
      e.sentences = j.at("sentences").get<std::vector<std::string>>();
      e.keywords = j.at("keywords").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& ex) {
      problems.push_back(where + "malformed record (" + ex.what() + ")");
      continue;
    }
    if (auto err = validate_entry(e); !err.empty()) {
      problems.push_back(where + err);
      continue;
    }
    if (!ids.insert(e.id).second) {
      problems.push_back(where + "duplicate id '" + e.id + "'");
      continue;
    }
    ds.entries.push_back(std::move(e));
  }
  if (!problems.empty()) {
    std::string msg = "invalid dataset " + file.string() + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  if (ds.entries.empty()) throw ValidationError("dataset " + file.string() + " has no entries");
  return ds;
}

inline void save_dataset(const std::filesystem::path& file, const std::vector<DatasetEntry>& entries) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot write dataset " + file.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j = e;
    os << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Distinct sentences (compared after tokenization) per image.
inline double diversity_score(const Dataset& ds) {
  if (ds.entries.empty()) throw ValidationError("diversity_score: empty dataset");
  std::set<TokenSeq> unique;
  for (const auto& e : ds.entries)
    for (const auto& s : e.sentences) unique.insert(tokenize(s));
  return static_cast<double>(unique.size()) / static_cast<double>(ds.entries.size());
}

struct DiagnosticsReport {
  double diversity = 0.0;
  double average_similarity = 0.0;
  Tensor matrix;                       // [sampled captions x images]
  std::vector<std::size_t> row_image;  // own image of each row
  std::vector<std::size_t> row_caption;  // flat caption index (image * 5 + sentence)
  std::size_t vocabulary_size = 0;
  std::map<std::string, std::size_t> categories;
};

/// Evenly spaced caption indices, at most `sample` of them, in ascending order.
inline std::vector<std::size_t> sample_captions(std::size_t total, std::size_t sample) {
  std::vector<std::size_t> out;
  if (sample == 0 || sample >= total) {
    out.resize(total);
    for (std::size_t i = 0; i < total; ++i) out[i] = i;
    return out;
  }
  for (std::size_t k = 0; k < sample; ++k) out.push_back(k * total / sample);
  return out;
}

inline DiagnosticsReport similarity_diagnostic(const Dataset& ds, std::size_t sample,
                                               double bleu_weight = kDefaultBleuWeight) {
  DiagnosticsReport r;
  r.diversity = diversity_score(ds);
  const std::size_t n = ds.size();
  std::vector<std::vector<TokenSeq>> refs(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& s : ds.entries[i].sentences) refs[i].push_back(tokenize(s));

  r.row_caption = sample_captions(ds.caption_count(), sample);
  r.matrix = Tensor({r.row_caption.size(), n});
  double off_sum = 0.0;
  std::size_t off_count = 0;
  for (std::size_t row = 0; row < r.row_caption.size(); ++row) {
    const std::size_t img = r.row_caption[row] / kSentencesPerImage;
    const TokenSeq& caption = refs[img][r.row_caption[row] % kSentencesPerImage];
    r.row_image.push_back(img);
    for (std::size_t col = 0; col < n; ++col) {
      const double s = prior_similarity(caption, refs[col], bleu_weight);
      r.matrix.at(row, col) = s;
      if (col != img) {
        off_sum += s;
        ++off_count;
      }
    }
  }
  r.average_similarity = off_count ? off_sum / static_cast<double>(off_count) : 0.0;
  r.vocabulary_size = ds.build_vocabulary().size() - 1;
  for (const auto& e : ds.entries) ++r.categories[e.category];
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic fixture: one object on a terrain, captions naming its colour,
// kind, terrain and location.

namespace fixture {

struct Rgb {
  double r, g, b;
};

struct Terrain {
  const char* name;  // a category name from the RSITMD class list
  Rgb colour;
};

inline constexpr std::array<Terrain, 4> kTerrains{{{"meadow", {0.25, 0.55, 0.2}},
                                                   {"pond", {0.15, 0.3, 0.6}},
                                                   {"desert", {0.85, 0.75, 0.5}},
                                                   {"parking", {0.45, 0.45, 0.45}}}};

struct Paint {
  const char* name;
  Rgb colour;
};

inline constexpr std::array<Paint, 4> kPaints{{{"red", {0.9, 0.1, 0.1}},
                                               {"white", {0.97, 0.97, 0.97}},
                                               {"yellow", {0.95, 0.85, 0.1}},
                                               {"black", {0.05, 0.05, 0.05}}}};

enum class Form { block, disk, wedge, cross };
inline constexpr std::array<const char*, 4> kFormNames{"building", "tank", "tent", "tower"};
// Size factors chosen so the four forms cover clearly different areas.
inline constexpr std::array<double, 4> kFormScale{1.2, 1.0, 0.9, 1.0};

inline constexpr std::array<const char*, 4> kPlaces{"north west", "north east", "south west", "south east"};

struct Scene {
  std::size_t terrain, paint, form, place;
};

inline bool inside(Form form, double dx, double dy) {
  // dx, dy are offsets from the object centre in units of its half-size.
  switch (form) {
    case Form::block: return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    case Form::disk: return dx * dx + dy * dy <= 1.0;
    case Form::wedge: return dy >= -1.0 && dy <= 1.0 && std::abs(dx) <= (dy + 1.0) / 2.0;
    case Form::cross: return (std::abs(dx) <= 1.0 && std::abs(dy) <= 0.1) || (std::abs(dy) <= 1.0 && std::abs(dx) <= 0.1);
  }
  return false;
}

inline void fill_terrain(Tensor& image, const Rgb& c, Rng& rng) {
  const std::size_t h = image.extent(1), w = image.extent(2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double n = rng.uniform(-0.04, 0.04);
      image.at(0, y, x) = std::clamp(c.r + n, 0.0, 1.0);
      image.at(1, y, x) = std::clamp(c.g + n, 0.0, 1.0);
      image.at(2, y, x) = std::clamp(c.b + n, 0.0, 1.0);
    }
}

/// Paints an object of the given form centred at (cx, cy) with half-size r.
inline void draw_object(Tensor& image, Form form, const Rgb& c, double cx, double cy, double r) {
  const std::size_t h = image.extent(1), w = image.extent(2);
  const long y0 = std::max(0L, static_cast<long>(cy - r - 1)), y1 = std::min(static_cast<long>(h), static_cast<long>(cy + r + 2));
  const long x0 = std::max(0L, static_cast<long>(cx - r - 1)), x1 = std::min(static_cast<long>(w), static_cast<long>(cx + r + 2));
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x)
      if (inside(form, (x + 0.5 - cx) / r, (y + 0.5 - cy) / r)) {
        image.at(0, y, x) = c.r;
        image.at(1, y, x) = c.g;
        image.at(2, y, x) = c.b;
      }
}

inline Tensor render(const Scene& s, std::size_t size, Rng& rng) {
  Tensor image({3, size, size});
  fill_terrain(image, kTerrains[s.terrain].colour, rng);
  const double quarter = static_cast<double>(size) / 4.0;
  const double cx = (s.place % 2 == 0 ? 1.0 : 3.0) * quarter + rng.uniform(-0.3, 0.3) * quarter;
  const double cy = (s.place / 2 == 0 ? 1.0 : 3.0) * quarter + rng.uniform(-0.3, 0.3) * quarter;
  draw_object(image, static_cast<Form>(s.form), kPaints[s.paint].colour, cx, cy, 0.8 * kFormScale[s.form] * quarter);
  return image;
}

inline std::array<std::string, kSentencesPerImage> full_captions(const Scene& s) {
  const std::string c = kPaints[s.paint].name, f = kFormNames[s.form], t = kTerrains[s.terrain].name,
                    p = kPlaces[s.place];
  return {"A " + c + " " + f + " stands on the " + t + ".",
          "There is a " + c + " " + f + " in the " + p + " of the " + t + ".",
          "The " + t + " surrounds one " + c + " " + f + ".",
          "In the " + p + " corner we can see a " + c + " " + f + " on " + t + ".",
          "A " + f + " painted " + c + " lies beside the " + t + ", toward the " + p + "."};
}

/// Captions that may leave attributes out; several images can share a caption.
inline std::array<std::string, kSentencesPerImage> loose_captions(const Scene& s, Rng& rng) {
  const std::string c = kPaints[s.paint].name, f = kFormNames[s.form], t = kTerrains[s.terrain].name,
                    p = kPlaces[s.place];
  const std::array<std::string, 8> pool{"A " + c + " " + f + " stands on the " + t + ".",
                                        "There is a " + f + " on the " + t + ".",
                                        "A " + c + " " + f + " is visible.",
                                        "Some " + t + " with a " + f + ".",
                                        "The " + t + " surrounds one " + c + " object.",
                                        "A " + f + " in the " + p + ".",
                                        "This is a " + t + ".",
                                        "A " + c + " " + f + " in the " + p + " of the " + t + "."};
  std::array<std::string, kSentencesPerImage> out;
  std::vector<std::size_t> order{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(order);
  for (std::size_t i = 0; i < kSentencesPerImage; ++i) out[i] = pool[order[i]];
  return out;
}

}  // namespace fixture

struct Fixture {
  std::vector<DatasetEntry> entries;
  std::vector<Tensor> images;
  std::vector<fixture::Scene> scenes;
};

/// Deterministic synthetic dataset. In planted mode every image gets a
/// distinct (terrain, colour, kind) combination, spread over the first 64
/// combinations before locations start to vary, and every caption names all
/// attributes, so a caption identifies its image.
inline Fixture make_fixture(std::uint64_t seed, std::size_t n_images, bool planted, std::size_t image_size = 256) {
  using namespace fixture;
  if (n_images < 4) throw ValidationError("make_fixture: need at least 4 images");
  if (planted && n_images > 256) throw ValidationError("make_fixture: planted mode supports at most 256 images");
  if (image_size == 0 || image_size % 32 != 0) throw ValidationError("make_fixture: image size must be a multiple of 32");

  Rng rng(seed);
  Rng layout = rng.fork(1), pixels = rng.fork(2), words = rng.fork(3);
  Fixture fx;
  std::vector<std::size_t> combos;
  if (planted) {
    combos.resize(n_images);
    for (std::size_t k = 0; k < n_images; ++k) combos[k] = k;
    layout.shuffle(combos);
  }
  for (std::size_t i = 0; i < n_images; ++i) {
    Scene s;
    if (planted) {
      const std::size_t k = combos[i];
      s = {(k / 16) % 4, (k / 4) % 4, k % 4, n_images <= 64 ? layout.below(4) : k / 64};
    } else {
      s = {layout.below(4), layout.below(4), layout.below(4), layout.below(4)};
    }
    char id[32];
    std::snprintf(id, sizeof id, "img_%04zu", i);
    DatasetEntry e;
    e.id = id;
    e.image = std::string("images/") + id + ".ppm";
    e.category = kTerrains[s.terrain].name;
    const auto caps = planted ? full_captions(s) : loose_captions(s, words);
    e.sentences.assign(caps.begin(), caps.end());
    e.keywords = {std::string(kPaints[s.paint].name) + " " + kFormNames[s.form], kTerrains[s.terrain].name};
    if (!planted) {
      const std::size_t extra = words.below(3);
      if (extra >= 1) e.keywords.push_back(kPlaces[s.place]);
      if (extra >= 2) e.keywords.push_back(kFormNames[s.form]);
    }
    fx.images.push_back(render(s, image_size, pixels));
    fx.scenes.push_back(s);
    fx.entries.push_back(std::move(e));
  }
  return fx;
}

/// Large scene for localization: a grid of fixture images, one of which holds
/// the target. The query is the target's first full caption.
struct PlantedScene {
  Tensor image;
  fixture::Scene target;
  std::size_t x = 0, y = 0, size = 0;  // target footprint
  std::string query;
  std::vector<std::string> keywords;
};

inline PlantedScene make_planted_scene(std::uint64_t seed, std::size_t cells = 2, std::size_t cell_size = 256) {
  using namespace fixture;
  if (cells < 2) throw ValidationError("make_planted_scene: need at least a 2x2 grid");
  if (cell_size == 0 || cell_size % 32 != 0) throw ValidationError("make_planted_scene: cell size must be a multiple of 32");
  Rng rng(seed);
  Rng layout = rng.fork(11), pixels = rng.fork(12);
  const std::size_t side = cells * cell_size, target_cell = layout.below(cells * cells);
  PlantedScene out;
  out.image = Tensor({3, side, side});
  out.target = {layout.below(4), layout.below(4), layout.below(4), layout.below(4)};
  for (std::size_t c = 0; c < cells * cells; ++c) {
    Scene s = out.target;
    if (c != target_cell) {
      // Distractors never share the target's colour or form.
      s = {layout.below(4), (out.target.paint + 1 + layout.below(3)) % 4, (out.target.form + 1 + layout.below(3)) % 4,
           layout.below(4)};
    }
    const Tensor tile = render(s, cell_size, pixels);
    const std::size_t ox = (c % cells) * cell_size, oy = (c / cells) * cell_size;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t yy = 0; yy < cell_size; ++yy)
        for (std::size_t xx = 0; xx < cell_size; ++xx) out.image.at(ch, oy + yy, ox + xx) = tile.at(ch, yy, xx);
    if (c == target_cell) {
      out.x = ox;
      out.y = oy;
      out.size = cell_size;
    }
  }
  out.query = full_captions(out.target)[0];
  out.keywords = {std::string(kPaints[out.target.paint].name) + " " + kFormNames[out.target.form],
                  kTerrains[out.target.terrain].name};
  return out;
}

inline void write_fixture(const std::filesystem::path& dir, const Fixture& fx) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < fx.entries.size(); ++i) write_ppm((dir / fx.entries[i].image).string(), fx.images[i]);
  save_dataset(dir / "dataset.jsonl", fx.entries);
}

}  // namespace amfmn
