// SPDX-License-Identifier: Apache-2.0
//
// Visual-guided attention (soft, fusion, similarity), dynamic sentence/keyword
// fusion and the cosine matching score.
#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amfmn/tensor.hpp"

namespace amfmn {

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  std::size_t in() const { return weight.extent(1); }
  std::size_t out() const { return weight.extent(0); }

  static Linear zeros(std::size_t in, std::size_t out) { return {Tensor({out, in}), Tensor({out})}; }
  static Linear random(std::size_t in, std::size_t out, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    return {rng.uniform_tensor({out, in}, -k, k), rng.uniform_tensor({out}, -k, k)};
  }

  std::vector<double> operator()(std::span<const double> x) const {
    auto y = matvec(weight, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i];
    return y;
  }
};

enum class VgaVariant { soft, fusion, sim };

inline std::string_view to_string(VgaVariant v) {
  switch (v) {
    case VgaVariant::soft: return "soft";
    case VgaVariant::fusion: return "fusion";
    case VgaVariant::sim: return "sim";
  }
  return "?";
}

inline VgaVariant parse_variant(std::string_view s) {
  if (s == "soft") return VgaVariant::soft;
  if (s == "fusion") return VgaVariant::fusion;
  if (s == "sim") return VgaVariant::sim;
  throw ValidationError("unknown VGA variant '" + std::string(s) + "' (expected soft, fusion or sim)");
}

/// Parameters of one VGA variant. Unused maps stay empty.
///   soft:   first = gate map (v -> t)
///   fusion: first = information map, second = gate map, both Cat(v,t) -> t
///   sim:    first = visual map (v -> t), second = text map (t -> t)
struct VgaParams {
  VgaVariant variant = VgaVariant::soft;
  Linear first;
  Linear second;

  static VgaParams zeros(VgaVariant variant, std::size_t visual_dim, std::size_t text_dim) {
    switch (variant) {
      case VgaVariant::soft: return {variant, Linear::zeros(visual_dim, text_dim), {}};
      case VgaVariant::fusion:
        return {variant, Linear::zeros(visual_dim + text_dim, text_dim), Linear::zeros(visual_dim + text_dim, text_dim)};
      case VgaVariant::sim:
        return {variant, Linear::zeros(visual_dim, text_dim), Linear::zeros(text_dim, text_dim)};
    }
    throw std::logic_error("unreachable");
  }

  static VgaParams random(VgaVariant variant, std::size_t visual_dim, std::size_t text_dim, Rng& rng) {
    switch (variant) {
      case VgaVariant::soft: return {variant, Linear::random(visual_dim, text_dim, rng), {}};
      case VgaVariant::fusion: {
        Linear info = Linear::random(visual_dim + text_dim, text_dim, rng);
        Linear gate = Linear::random(visual_dim + text_dim, text_dim, rng);
        return {variant, std::move(info), std::move(gate)};
      }
      case VgaVariant::sim: {
        Linear fv = Linear::random(visual_dim, text_dim, rng);
        Linear ft = Linear::random(text_dim, text_dim, rng);
        return {variant, std::move(fv), std::move(ft)};
      }
    }
    throw std::logic_error("unreachable");
  }
};

namespace detail {

inline void expect_len(std::span<const double> x, std::size_t n, const char* op, const char* what) {
  if (x.size() != n) {
    throw DimensionError(std::string(op) + ": " + what + " has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(n));
  }
}

inline std::vector<double> cat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace detail

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a), nb = norm2(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) return 0.0;
  return dot(a, b) / (na * nb);
}

/// t' = sigmoid(linear(v)) * t
inline std::vector<double> vga_soft(std::span<const double> v, std::span<const double> t, const VgaParams& p) {
  detail::expect_len(v, p.first.in(), "vga_soft", "visual vector");
  detail::expect_len(t, p.first.out(), "vga_soft", "text vector");
  auto gate = p.first(v);
  for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = sigmoid(gate[i]) * t[i];
  return gate;
}

/// t' = linear1(Cat(v,t)) * sigmoid(linear2(Cat(v,t)))
inline std::vector<double> vga_fusion(std::span<const double> v, std::span<const double> t, const VgaParams& p) {
  detail::expect_len(v, p.first.in() - p.first.out(), "vga_fusion", "visual vector");
  detail::expect_len(t, p.first.out(), "vga_fusion", "text vector");
  const auto joint = detail::cat(v, t);
  auto info = p.first(joint);
  const auto gate = p.second(joint);
  for (std::size_t i = 0; i < info.size(); ++i) info[i] *= sigmoid(gate[i]);
  return info;
}

/// t' = sigmoid(cos(linear(v), linear(t))) * linear(t); the cosine of a zero vector is 0.
inline std::vector<double> vga_sim(std::span<const double> v, std::span<const double> t, const VgaParams& p) {
  detail::expect_len(v, p.first.in(), "vga_sim", "visual vector");
  detail::expect_len(t, p.second.in(), "vga_sim", "text vector");
  const auto fv = p.first(v);
  auto ft = p.second(t);
  const double g = sigmoid(cosine(fv, ft));
  for (double& x : ft) x *= g;
  return ft;
}

inline std::vector<double> vga(std::span<const double> v, std::span<const double> t, const VgaParams& p) {
  switch (p.variant) {
    case VgaVariant::soft: return vga_soft(v, t, p);
    case VgaVariant::fusion: return vga_fusion(v, t, p);
    case VgaVariant::sim: return vga_sim(v, t, p);
  }
  throw std::logic_error("unreachable");
}

/// Per-image half of a VGA evaluation. Splitting the linear maps lets a
/// similarity matrix reuse the image and text halves across all pairs.
struct VisualGuide {
  std::vector<double> first;   // soft: gate; fusion: visual part of info; sim: f^(v)
  std::vector<double> second;  // fusion: visual part of gate
};

struct TextGuide {
  std::vector<double> raw;     // t
  std::vector<double> first;   // fusion: text part of info (+bias); sim: f^(t)
  std::vector<double> second;  // fusion: text part of gate (+bias)
};

namespace detail {

inline std::vector<double> partial_matvec(const Tensor& w, std::size_t col0, std::span<const double> x) {
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) acc += w[r * cols + col0 + c] * x[c];
    y[r] = acc;
  }
  return y;
}

}  // namespace detail

inline VisualGuide make_visual_guide(std::span<const double> v, const VgaParams& p) {
  VisualGuide g;
  switch (p.variant) {
    case VgaVariant::soft:
      detail::expect_len(v, p.first.in(), "vga_soft", "visual vector");
      g.first = p.first(v);
      for (double& x : g.first) x = sigmoid(x);
      break;
    case VgaVariant::fusion:
      detail::expect_len(v, p.first.in() - p.first.out(), "vga_fusion", "visual vector");
      g.first = detail::partial_matvec(p.first.weight, 0, v);
      g.second = detail::partial_matvec(p.second.weight, 0, v);
      break;
    case VgaVariant::sim:
      detail::expect_len(v, p.first.in(), "vga_sim", "visual vector");
      g.first = p.first(v);
      break;
  }
  return g;
}

inline TextGuide make_text_guide(std::span<const double> t, const VgaParams& p) {
  TextGuide g;
  g.raw.assign(t.begin(), t.end());
  switch (p.variant) {
    case VgaVariant::soft: detail::expect_len(t, p.first.out(), "vga_soft", "text vector"); break;
    case VgaVariant::fusion: {
      detail::expect_len(t, p.first.out(), "vga_fusion", "text vector");
      const std::size_t vdim = p.first.in() - p.first.out();
      g.first = detail::partial_matvec(p.first.weight, vdim, t);
      g.second = detail::partial_matvec(p.second.weight, vdim, t);
      for (std::size_t i = 0; i < g.first.size(); ++i) {
        g.first[i] += p.first.bias[i];
        g.second[i] += p.second.bias[i];
      }
      break;
    }
    case VgaVariant::sim:
      detail::expect_len(t, p.second.in(), "vga_sim", "text vector");
      g.first = p.second(t);
      break;
  }
  return g;
}

inline std::vector<double> apply_guide(VgaVariant variant, const VisualGuide& v, const TextGuide& t) {
  std::vector<double> out(t.raw.size());
  switch (variant) {
    case VgaVariant::soft:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.first[i] * t.raw[i];
      break;
    case VgaVariant::fusion:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (v.first[i] + t.first[i]) * sigmoid(v.second[i] + t.second[i]);
      break;
    case VgaVariant::sim: {
      out.resize(t.first.size());
      const double g = sigmoid(cosine(v.first, t.first));
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = g * t.first[i];
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projection heads and fusion

struct ProjectionHeads {
  Tensor visual;    // W_v: [D_f x D_v]
  Tensor sentence;  // W_s: [D_f x D_t]
  Tensor keyword;   // W_k: [D_f x D_t]
  Linear gate;      // Cat(L2(s), L2(k)) [2 D_f] -> D_f

  std::size_t joint_dim() const { return visual.extent(0); }

  static ProjectionHeads random(std::size_t visual_dim, std::size_t text_dim, std::size_t joint_dim, Rng& rng) {
    const auto xavier = [&](std::size_t in, std::size_t out) {
      const double k = std::sqrt(6.0 / static_cast<double>(in + out));
      return rng.uniform_tensor({out, in}, -k, k);
    };
    ProjectionHeads h;
    h.visual = xavier(visual_dim, joint_dim);
    h.sentence = xavier(text_dim, joint_dim);
    h.keyword = xavier(text_dim, joint_dim);
    h.gate = Linear::random(2 * joint_dim, joint_dim, rng);
    return h;
  }

  /// Fixed parameter order shared by the optimizer, gradients and checkpoints.
  std::array<Tensor*, 5> parameters() { return {&visual, &sentence, &keyword, &gate.weight, &gate.bias}; }
  std::array<const Tensor*, 5> parameters() const {
    return {&visual, &sentence, &keyword, &gate.weight, &gate.bias};
  }
};

/// F_t = g*s + (1-g)*k with g = sigmoid(linear(Cat(L2(s), L2(k)))). Without
/// keywords the gate is pinned to 1 and F_t = s.
inline std::vector<double> dynamic_fuse(std::span<const double> s, std::optional<std::span<const double>> k,
                                        const Linear& gate) {
  if (!k) return {s.begin(), s.end()};
  detail::expect_len(*k, s.size(), "dynamic_fuse", "keyword vector");
  detail::expect_len(s, gate.out(), "dynamic_fuse", "sentence vector");
  const auto w = gate(detail::cat(l2_normalize(s), l2_normalize(*k)));
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double g = sigmoid(w[i]);
    out[i] = g * s[i] + (1.0 - g) * (*k)[i];
  }
  return out;
}

struct JointEmbedding {
  std::vector<double> image;  // W_v F_v
  std::vector<double> text;   // F_t in the joint space
  std::vector<double> image_unit;
  std::vector<double> text_unit;
};

inline JointEmbedding make_joint(std::vector<double> image, std::vector<double> text) {
  JointEmbedding j;
  j.image_unit = l2_normalize(image);
  j.text_unit = l2_normalize(text);
  j.image = std::move(image);
  j.text = std::move(text);
  return j;
}

/// Projects sentence and keyword branches into the joint space and fuses them.
inline std::vector<double> project_text(std::span<const double> sentence_guided,
                                        std::optional<std::span<const double>> keyword_guided,
                                        const ProjectionHeads& heads) {
  const auto s = matvec(heads.sentence, sentence_guided);
  if (!keyword_guided) return s;
  const auto k = matvec(heads.keyword, *keyword_guided);
  return dynamic_fuse(s, std::span<const double>(k), heads.gate);
}

/// Cosine of the projected image vector and the joint text vector; 0 when
/// either is degenerate.
inline double similarity(std::span<const double> visual, std::span<const double> text_joint,
                         const ProjectionHeads& heads) {
  const auto image = matvec(heads.visual, visual);
  detail::expect_len(text_joint, image.size(), "similarity", "text embedding");
  return cosine(image, text_joint);
}

inline double similarity(const JointEmbedding& e) { return dot(e.image_unit, e.text_unit); }

}  // namespace amfmn
