// SPDX-License-Identifier: Apache-2.0
//
// Text-driven localization in a large scene: multiscale tiling with half-grid
// offsets, per-tile scoring, pixel-level averaging and median filtering.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "amfmn/model.hpp"
#include "amfmn/pnm.hpp"

namespace amfmn {

enum class TileRound { base, offset, offset_x, offset_y };

inline std::string_view to_string(TileRound r) {
  switch (r) {
    case TileRound::base: return "base";
    case TileRound::offset: return "offset";
    case TileRound::offset_x: return "offset_x";
    case TileRound::offset_y: return "offset_y";
  }
  return "?";
}

struct TileSpec {
  std::size_t scale;
  std::size_t x, y;  // top-left corner
  TileRound round;

  bool operator==(const TileSpec&) const = default;
};

struct TilingOptions {
  // Adds x-only and y-only half-offset rounds after the diagonal one.
  bool axis_offsets = false;
};

/// All fully contained tiles per scale: the base grid at (i*s, j*s), then the
/// grid shifted by s/2 along both axes. Rows are enumerated top to bottom.
/// When the scene is smaller than every scale the result is empty and a
/// message is appended to `warnings`.
inline std::vector<TileSpec> tile_multiscale(std::size_t width, std::size_t height, std::span<const std::size_t> scales,
                                             TilingOptions options = {},
                                             std::vector<std::string>* warnings = nullptr) {
  if (scales.empty()) throw ValidationError("tile_multiscale: no scales given");
  for (std::size_t s : scales)
    if (s < 2) throw ValidationError("tile_multiscale: scales must be at least 2 pixels");

  std::vector<TileSpec> tiles;
  const auto grid = [&](std::size_t s, std::size_t ox, std::size_t oy, TileRound round) {
    for (std::size_t y = oy; y + s <= height; y += s)
      for (std::size_t x = ox; x + s <= width; x += s) tiles.push_back({s, x, y, round});
  };
  for (std::size_t s : scales) {
    grid(s, 0, 0, TileRound::base);
    grid(s, s / 2, s / 2, TileRound::offset);
    if (options.axis_offsets) {
      grid(s, s / 2, 0, TileRound::offset_x);
      grid(s, 0, s / 2, TileRound::offset_y);
    }
  }
  if (tiles.empty() && warnings) {
    warnings->push_back("scene " + std::to_string(width) + "x" + std::to_string(height) +
                        " is smaller than every tile scale; no tiles produced");
  }
  return tiles;
}

inline std::vector<TileSpec> tile_multiscale(std::size_t width, std::size_t height,
                                             std::initializer_list<std::size_t> scales, TilingOptions options = {},
                                             std::vector<std::string>* warnings = nullptr) {
  return tile_multiscale(width, height, std::span<const std::size_t>(scales.begin(), scales.size()), options,
                         warnings);
}

/// Cosine similarity of each tile with the query, mapped from [-1,1] to [0,1].
inline std::vector<double> score_tiles(const Tensor& scene, std::span<const TileSpec> tiles, const TextFeatures& query,
                                       const Model& model) {
  if (scene.rank() != 3) throw DimensionError("score_tiles: scene must be CxHxW");
  std::vector<double> scores;
  scores.reserve(tiles.size());
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const TileSpec& tile = tiles[t];
    try {
      const Tensor patch = crop(scene, tile.x, tile.y, tile.scale, tile.scale);
      const auto visual = model.encode_image(patch);
      scores.push_back((model.score(visual, query) + 1.0) / 2.0);
    } catch (const Error& e) {
      throw ValidationError("tile " + std::to_string(t) + " (scale " + std::to_string(tile.scale) + " at " +
                            std::to_string(tile.x) + "," + std::to_string(tile.y) + "): " + e.what());
    }
  }
  return scores;
}

struct ProbabilityMap {
  Tensor values;                    // H x W
  std::vector<std::size_t> counts;  // covering tiles per pixel, row-major

  std::size_t height() const { return values.extent(0); }
  std::size_t width() const { return values.extent(1); }
};

/// Per-pixel mean of the scores of all covering tiles. `scale_weights` turns
/// it into a weighted mean; scales missing from the map weigh 1.
inline ProbabilityMap aggregate_map(std::span<const TileSpec> tiles, std::span<const double> scores, std::size_t width,
                                    std::size_t height, const std::map<std::size_t, double>& scale_weights = {}) {
  if (tiles.size() != scores.size()) throw DimensionError("aggregate_map: scores do not match tiles");
  ProbabilityMap map{Tensor({height, width}), std::vector<std::size_t>(height * width, 0)};
  std::vector<double> weight(height * width, 0.0);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const TileSpec& tile = tiles[t];
    if (tile.x + tile.scale > width || tile.y + tile.scale > height) {
      throw DimensionError("aggregate_map: tile exceeds the scene bounds");
    }
    const auto it = scale_weights.find(tile.scale);
    const double w = it == scale_weights.end() ? 1.0 : it->second;
    for (std::size_t y = tile.y; y < tile.y + tile.scale; ++y)
      for (std::size_t x = tile.x; x < tile.x + tile.scale; ++x) {
        const std::size_t p = y * width + x;
        map.values[p] += w * scores[t];
        weight[p] += w;
        ++map.counts[p];
      }
  }
  for (std::size_t p = 0; p < weight.size(); ++p)
    if (map.counts[p] > 0) map.values[p] = weight[p] > 0.0 ? map.values[p] / weight[p] : 0.0;
  return map;
}

/// k x k median with windows clipped at the borders. For an even number of
/// samples the lower median is taken, so outputs are always input values.
inline ProbabilityMap median_filter(const ProbabilityMap& in, std::size_t k, std::size_t passes = 1) {
  if (k < 3 || k % 2 == 0) throw ValidationError("median_filter: window must be odd and at least 3");
  const std::size_t h = in.height(), w = in.width(), r = k / 2;
  ProbabilityMap cur = in;
  std::vector<double> window;
  window.reserve(k * k);
  for (std::size_t pass = 0; pass < passes; ++pass) {
    Tensor next({h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        window.clear();
        for (std::size_t yy = y > r ? y - r : 0; yy <= std::min(h - 1, y + r); ++yy)
          for (std::size_t xx = x > r ? x - r : 0; xx <= std::min(w - 1, x + r); ++xx)
            window.push_back(cur.values.at(yy, xx));
        const auto mid = window.begin() + static_cast<long>((window.size() - 1) / 2);
        std::nth_element(window.begin(), mid, window.end());
        next.at(y, x) = *mid;
      }
    cur.values = std::move(next);
  }
  return cur;
}

/// Pixel coordinates of the largest value; ties go to the first in row-major
/// order.
inline std::pair<std::size_t, std::size_t> argmax_pixel(const ProbabilityMap& map) {
  const auto v = map.values.values();
  const auto it = std::max_element(v.begin(), v.end());
  const auto p = static_cast<std::size_t>(it - v.begin());
  return {p % map.width(), p / map.width()};
}

struct HeatmapInfo {
  std::vector<std::size_t> scales;
  std::vector<TileSpec> tiles;
  std::size_t median = 3;
  std::size_t passes = 1;
  std::string query;
};

/// Writes the map as an 8-bit P5 image and `<path>.json` describing how it
/// was made.
inline void emit_heatmap(const ProbabilityMap& map, const std::string& path, const HeatmapInfo& info = {}) {
  write_pgm(path, map.values);

  nlohmann::ordered_json side;
  side["width"] = map.width();
  side["height"] = map.height();
  side["query"] = info.query;
  side["scales"] = info.scales;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (std::size_t s : info.scales) counts[std::to_string(s)] = {{"base", 0}, {"offset", 0}};
  for (const auto& t : info.tiles) {
    auto& slot = counts[std::to_string(t.scale)][std::string(to_string(t.round))];
    slot = slot.is_null() ? std::size_t{1} : slot.get<std::size_t>() + 1;
  }
  side["tile_counts"] = counts;
  side["tiles_total"] = info.tiles.size();
  side["median_filter"] = {{"window", info.median}, {"passes", info.passes}, {"borders", "clipped"}};
  side["score_mapping"] = "(cosine + 1) / 2";
  side["aggregation"] = "unweighted mean over covering tiles; uncovered pixels 0";
  std::size_t covered = 0;
  for (std::size_t c : map.counts) covered += c > 0;
  side["covered_pixels"] = covered;

  const std::string side_path = path + ".json";
  std::ofstream os(side_path);
  if (!os) throw IoError("cannot write heatmap sidecar " + side_path);
  os << side.dump(2) << '\n';
  if (!os) throw IoError("failed writing heatmap sidecar " + side_path);
}

struct LocateOptions {
  std::vector<std::size_t> scales{128, 256, 512};
  std::size_t median = 3;
  std::size_t passes = 1;
  TilingOptions tiling;
};

struct Localization {
  std::vector<TileSpec> tiles;
  std::vector<double> scores;
  ProbabilityMap raw;
  ProbabilityMap filtered;
  std::vector<std::string> warnings;
};

inline Localization locate(const Tensor& scene, const TextFeatures& query, const Model& model,
                           const LocateOptions& opt = {}) {
  Localization out;
  const std::size_t h = scene.extent(1), w = scene.extent(2);
  out.tiles = tile_multiscale(w, h, opt.scales, opt.tiling, &out.warnings);
  out.scores = score_tiles(scene, out.tiles, query, model);
  out.raw = aggregate_map(out.tiles, out.scores, w, h);
  out.filtered = median_filter(out.raw, opt.median, opt.passes);
  return out;
}

}  // namespace amfmn
