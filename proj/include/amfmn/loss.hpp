// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional triplet losses with a fixed margin or a margin derived from
// the prior text similarity of each negative pair, and exact gradients of
// those losses with respect to the projection heads.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "amfmn/model.hpp"

namespace amfmn {

enum class NegativeStrategy { all, hardest };
enum class MarginMode { fixed, dynamic };

inline NegativeStrategy parse_strategy(std::string_view s) {
  if (s == "all") return NegativeStrategy::all;
  if (s == "hardest") return NegativeStrategy::hardest;
  throw ValidationError("unknown negative strategy '" + std::string(s) + "' (expected all or hardest)");
}

inline MarginMode parse_margin_mode(std::string_view s) {
  if (s == "fixed") return MarginMode::fixed;
  if (s == "dynamic") return MarginMode::dynamic;
  throw ValidationError("unknown loss '" + std::string(s) + "' (expected fixed or dynamic)");
}

inline std::string_view to_string(NegativeStrategy s) { return s == NegativeStrategy::all ? "all" : "hardest"; }
inline std::string_view to_string(MarginMode m) { return m == MarginMode::fixed ? "fixed" : "dynamic"; }

struct MarginParams {
  MarginMode mode = MarginMode::dynamic;
  double alpha = 0.2;  // fixed margin
  double gamma = 0.6;  // maximum dynamic margin
  double beta = 5.0;   // decay coefficient
  NegativeStrategy strategy = NegativeStrategy::hardest;

  static MarginParams fixed(double alpha, NegativeStrategy s = NegativeStrategy::hardest) {
    return {MarginMode::fixed, alpha, 0.6, 5.0, s};
  }
  static MarginParams dynamic(double gamma, double beta, NegativeStrategy s = NegativeStrategy::hardest) {
    return {MarginMode::dynamic, 0.2, gamma, beta, s};
  }

  void validate() const {
    if (mode == MarginMode::fixed) {
      if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("fixed margin alpha must lie in (0,1]");
    } else {
      if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("maximum margin gamma must lie in (0,1)");
      if (beta == 0.0 || !std::isfinite(beta)) throw ValidationError("decay coefficient beta must be finite and nonzero");
    }
  }
};

/// alpha_ct = gamma * (e^beta - e^(beta*S)) / (e^beta - 1).
inline double dynamic_margin(double prior, double gamma, double beta) {
  if (beta == 0.0 || !std::isfinite(beta)) throw ValidationError("dynamic_margin: beta must be finite and nonzero");
  // expm1 keeps the small-beta and S-near-1 cases accurate; the form is
  // algebraically identical.
  return gamma * (std::expm1(beta) - std::expm1(beta * prior)) / std::expm1(beta);
}

struct CurvePoint {
  double prior;
  double margin;
};

inline std::vector<CurvePoint> margin_curve(double gamma, double beta, std::size_t samples) {
  if (samples < 2) throw ValidationError("margin_curve: need at least two samples");
  std::vector<CurvePoint> out(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const double s = i + 1 == samples ? 1.0 : static_cast<double>(i) / static_cast<double>(samples - 1);
    out[i] = {s, dynamic_margin(s, gamma, beta)};
  }
  return out;
}

struct LossResult {
  double value = 0.0;
  Tensor dscores;  // dL/dscores, same shape as the score matrix
  /// Smallest distance of any evaluated hinge argument to its kink, or of two
  /// competing hardest negatives to each other. Gradients are exact only when
  /// this is positive.
  double kink_distance = std::numeric_limits<double>::infinity();
};

/// Margin matrix: margins[i][j] applies to image i with text j in both
/// directions. priors[i][j] = S(text j, captions of image i).
inline Tensor margin_matrix(const Tensor& priors, const MarginParams& params) {
  Tensor m(priors.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = params.mode == MarginMode::fixed ? params.alpha : dynamic_margin(priors[i], params.gamma, params.beta);
  }
  return m;
}

/// Bidirectional triplet loss over a square score matrix whose diagonal holds
/// the positive pairs. scores[i][j] = S(image i, text j).
inline LossResult triplet_loss(const Tensor& scores, const Tensor& margins, NegativeStrategy strategy) {
  if (scores.rank() != 2 || scores.extent(0) != scores.extent(1)) {
    throw DimensionError("triplet loss needs a square score matrix, got " + detail::shape_str(scores.shape()));
  }
  if (margins.shape() != scores.shape()) {
    throw DimensionError("margin matrix " + detail::shape_str(margins.shape()) + " does not match scores " +
                         detail::shape_str(scores.shape()));
  }
  const std::size_t n = scores.extent(0);
  LossResult r;
  r.dscores = Tensor(scores.shape());
  if (n < 2) return r;

  // Two passes: direction 0 queries images over negative texts (row i),
  // direction 1 queries texts over negative images (column i).
  for (int direction = 0; direction < 2; ++direction) {
    for (std::size_t q = 0; q < n; ++q) {
      const double positive = scores.at(q, q);
      double best = -std::numeric_limits<double>::infinity(), second = best;
      std::size_t best_idx = 0;
      for (std::size_t c = 0; c < n; ++c) {
        if (c == q) continue;
        const std::size_t i = direction == 0 ? q : c, j = direction == 0 ? c : q;
        const double arg = margins.at(i, j) - positive + scores.at(i, j);
        if (strategy == NegativeStrategy::all) {
          r.kink_distance = std::min(r.kink_distance, std::abs(arg));
          if (arg > 0.0) {
            r.value += arg;
            r.dscores.at(i, j) += 1.0;
            r.dscores.at(q, q) -= 1.0;
          }
        } else if (arg > best) {
          second = best;
          best = arg;
          best_idx = c;
        } else if (arg > second) {
          second = arg;
        }
      }
      if (strategy == NegativeStrategy::hardest) {
        r.kink_distance = std::min(r.kink_distance, std::abs(best));
        if (best > 0.0) {
          r.kink_distance = std::min(r.kink_distance, best - second);
          const std::size_t i = direction == 0 ? q : best_idx, j = direction == 0 ? best_idx : q;
          r.value += best;
          r.dscores.at(i, j) += 1.0;
          r.dscores.at(q, q) -= 1.0;
        }
      }
    }
  }
  return r;
}

inline double triplet_fixed(const Tensor& scores, double alpha, NegativeStrategy strategy) {
  return triplet_loss(scores, Tensor(scores.shape(), alpha), strategy).value;
}

inline double triplet_dynamic(const Tensor& scores, const Tensor& priors, double gamma, double beta,
                              NegativeStrategy strategy) {
  return triplet_loss(scores, margin_matrix(priors, MarginParams::dynamic(gamma, beta, strategy)), strategy).value;
}

// ---------------------------------------------------------------------------
// Gradients through the projection heads

/// Everything upstream of the heads for a B x B training batch: F_v per image,
/// the guided text vectors of every (image, text) pair, and the prior
/// similarities.
struct PairBatch {
  std::vector<std::vector<double>> visuals;
  GuidedPairs guided;
  Tensor priors;  // [B x B]

  std::size_t size() const { return visuals.size(); }
};

struct HeadGradients {
  Tensor visual, sentence, keyword, gate_weight, gate_bias;
  double loss = 0.0;
  double kink_distance = std::numeric_limits<double>::infinity();

  std::array<Tensor*, 5> parameters() { return {&visual, &sentence, &keyword, &gate_weight, &gate_bias}; }
};

namespace detail {

/// Backward of y = x/|x|: dx = (dy - y (y.dy)) / |x|; zero for degenerate x.
inline std::vector<double> normalize_backward(std::span<const double> x, std::span<const double> y,
                                              std::span<const double> dy) {
  const double n = norm2(x);
  std::vector<double> dx(x.size(), 0.0);
  if (n <= kNormEpsilon) return dx;
  const double proj = dot(y, dy);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (dy[i] - y[i] * proj) / n;
  return dx;
}

inline void add_outer(Tensor& grad, std::span<const double> left, std::span<const double> right, double scale = 1.0) {
  const std::size_t cols = right.size();
  for (std::size_t r = 0; r < left.size(); ++r) {
    const double l = left[r] * scale;
    if (l == 0.0) continue;
    double* row = grad.values().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += l * right[c];
  }
}

}  // namespace detail

inline Tensor batch_scores(const PairBatch& batch, const ProjectionHeads& heads) {
  return score_matrix(heads, batch.visuals, batch.guided);
}

/// Loss value and its exact gradient with respect to every projection-head
/// parameter. Upstream encoder outputs are constants. At a hinge kink the
/// inactive side (zero) is used.
inline HeadGradients grad_projection(const PairBatch& batch, const ProjectionHeads& heads, const MarginParams& margin) {
  margin.validate();
  const std::size_t n = batch.size();
  const Tensor scores = batch_scores(batch, heads);
  const LossResult loss = triplet_loss(scores, margin_matrix(batch.priors, margin), margin.strategy);

  HeadGradients g;
  g.visual = Tensor(heads.visual.shape());
  g.sentence = Tensor(heads.sentence.shape());
  g.keyword = Tensor(heads.keyword.shape());
  g.gate_weight = Tensor(heads.gate.weight.shape());
  g.gate_bias = Tensor(heads.gate.bias.shape());
  g.loss = loss.value;
  g.kink_distance = loss.kink_distance;

  const std::size_t d = heads.joint_dim();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = batch.visuals[i];
    const auto image = matvec(heads.visual, v);
    const auto image_unit = l2_normalize(image);
    std::vector<double> d_image_unit(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double up = loss.dscores.at(i, j);
      if (up == 0.0) continue;
      const std::size_t p = batch.guided.index(i, j);
      const auto& s_in = batch.guided.sentence[p];
      const auto s = matvec(heads.sentence, s_in);

      std::vector<double> text, d_s(d, 0.0), d_k, gate, s_unit, k_unit, k;
      const bool with_k = batch.guided.has_keywords[j];
      if (with_k) {
        k = matvec(heads.keyword, batch.guided.keyword[p]);
        s_unit = l2_normalize(s);
        k_unit = l2_normalize(k);
        gate = heads.gate(detail::cat(s_unit, k_unit));
        text.resize(d);
        for (std::size_t c = 0; c < d; ++c) {
          gate[c] = sigmoid(gate[c]);
          text[c] = gate[c] * s[c] + (1.0 - gate[c]) * k[c];
        }
      } else {
        text = s;
      }
      const auto text_unit = l2_normalize(text);

      // score = image_unit . text_unit
      for (std::size_t c = 0; c < d; ++c) {
        d_image_unit[c] += up * text_unit[c];
      }
      std::vector<double> d_text_unit(d);
      for (std::size_t c = 0; c < d; ++c) d_text_unit[c] = up * image_unit[c];
      const auto d_text = detail::normalize_backward(text, text_unit, d_text_unit);

      if (!with_k) {
        d_s = d_text;
      } else {
        d_k.assign(d, 0.0);
        std::vector<double> d_pre(d);
        for (std::size_t c = 0; c < d; ++c) {
          d_s[c] = d_text[c] * gate[c];
          d_k[c] = d_text[c] * (1.0 - gate[c]);
          d_pre[c] = d_text[c] * (s[c] - k[c]) * gate[c] * (1.0 - gate[c]);
        }
        const auto u = detail::cat(s_unit, k_unit);
        detail::add_outer(g.gate_weight, d_pre, u);
        for (std::size_t c = 0; c < d; ++c) g.gate_bias[c] += d_pre[c];
        // du = G^T d_pre
        std::vector<double> du(2 * d, 0.0);
        for (std::size_t r = 0; r < d; ++r) {
          if (d_pre[r] == 0.0) continue;
          const double* row = heads.gate.weight.values().data() + r * 2 * d;
          for (std::size_t c = 0; c < 2 * d; ++c) du[c] += row[c] * d_pre[r];
        }
        const auto ds_extra =
            detail::normalize_backward(s, s_unit, std::span<const double>(du).subspan(0, d));
        const auto dk_extra =
            detail::normalize_backward(k, k_unit, std::span<const double>(du).subspan(d, d));
        for (std::size_t c = 0; c < d; ++c) {
          d_s[c] += ds_extra[c];
          d_k[c] += dk_extra[c];
        }
        detail::add_outer(g.keyword, d_k, batch.guided.keyword[p]);
      }
      detail::add_outer(g.sentence, d_s, s_in);
    }
    const auto d_image = detail::normalize_backward(image, image_unit, d_image_unit);
    detail::add_outer(g.visual, d_image, v);
  }
  return g;
}

/// Loss only; used by finite-difference checks.
inline double batch_loss(const PairBatch& batch, const ProjectionHeads& heads, const MarginParams& margin) {
  return triplet_loss(batch_scores(batch, heads), margin_matrix(batch.priors, margin), margin.strategy).value;
}

}  // namespace amfmn
