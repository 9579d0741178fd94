// SPDX-License-Identifier: Apache-2.0
//
// Visual branch: a seeded five-stage convolutional extractor producing a
// feature pyramid, followed by multiscale fusion, redundant-feature filtering
// and the salient mask applied to the global vector.
#pragma once

#include <array>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amfmn/tensor.hpp"

namespace amfmn {

inline constexpr std::size_t kPyramidStages = 5;

struct FeaturePyramid {
  std::array<Tensor, kPyramidStages> stages;  // C_m x H_m x W_m
  std::vector<double> global;                 // v^(g)

  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

using ChannelPlan = std::array<std::size_t, kPyramidStages>;

/// Seeded stand-in for the pretrained backbone.
struct ExtractorParams {
  std::array<Tensor, kPyramidStages> kernels;  // [C_m x C_{m-1} x 3 x 3]
  std::array<Tensor, kPyramidStages> biases;   // [C_m]
  double slope = 0.25;
  Tensor projection;                           // [D x C_5]

  std::size_t global_dim() const { return projection.extent(0); }

  static ExtractorParams random(const ChannelPlan& channels, std::size_t global_dim, Rng& rng) {
    ExtractorParams p;
    std::size_t in = 3;
    for (std::size_t m = 0; m < kPyramidStages; ++m) {
      const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
      p.kernels[m] = rng.normal_tensor({channels[m], in, 3, 3}, std);
      p.biases[m] = rng.uniform_tensor({channels[m]}, -0.05, 0.05);
      in = channels[m];
    }
    p.projection = rng.normal_tensor({global_dim, in}, 1.0 / std::sqrt(static_cast<double>(in)));
    return p;
  }
};

/// Five stages of (3x3 conv, PReLU, 2x2 average pool); the global vector is the
/// spatial mean of stage five projected to D.
inline FeaturePyramid extract_pyramid(const Tensor& image, const ExtractorParams& params) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw ValidationError("extract_pyramid: expected a 3xHxW image, got " + detail::shape_str(image.shape()));
  }
  if (image.extent(1) % 32 != 0 || image.extent(2) % 32 != 0 || image.extent(1) == 0 || image.extent(2) == 0) {
    throw ValidationError("extract_pyramid: image extents must be positive multiples of 32, got " +
                          detail::shape_str(image.shape()));
  }
  FeaturePyramid out;
  Tensor x = image;
  for (std::size_t m = 0; m < kPyramidStages; ++m) {
    x = avg_pool2(activate(conv2d(x, params.kernels[m], params.biases[m].values()),
                           Activation::prelu(params.slope)));
    out.stages[m] = x;
  }
  const Tensor& last = out.stages.back();
  const std::size_t c = last.extent(0), hw = last.extent(1) * last.extent(2);
  std::vector<double> pooled(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) pooled[ch] += last[ch * hw + i];
    pooled[ch] /= static_cast<double>(hw);
  }
  out.global = matvec(params.projection, pooled);
  return out;
}

// Feature bundle: "XFBN", u64 header length, JSON header, then the five stages
// and the global vector as XTEN records.

inline void save_pyramid(std::ostream& os, const FeaturePyramid& p) {
  nlohmann::json header;
  header["stages"] = nlohmann::json::array();
  for (const auto& s : p.stages) header["stages"].push_back(s.shape());
  header["global_dim"] = p.global.size();
  const std::string text = header.dump();
  os.write("XFBN", 4);
  detail::put_le(os, text.size(), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& s : p.stages) write_tensor(os, s);
  write_tensor(os, Tensor::vector(p.global));
}

inline FeaturePyramid load_pyramid(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "XFBN") throw FormatError("not a feature bundle (bad magic)");
  const auto len = detail::get_le(is, 8, "bundle header length");
  if (len > (1u << 20)) throw FormatError("feature bundle header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated feature bundle header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed feature bundle header: ") + e.what());
  }
  if (!header.contains("stages") || header["stages"].size() != kPyramidStages || !header.contains("global_dim")) {
    throw FormatError("feature bundle header must list five stages and global_dim");
  }
  FeaturePyramid p;
  for (std::size_t m = 0; m < kPyramidStages; ++m) {
    p.stages[m] = read_tensor(is);
    if (p.stages[m].shape() != header["stages"][m].get<Shape>()) {
      throw FormatError("feature bundle stage " + std::to_string(m + 1) + " does not match its header shape");
    }
    if (p.stages[m].rank() != 3) throw FormatError("feature bundle stages must be CxHxW");
  }
  Tensor g = read_tensor(is);
  if (g.rank() != 1 || g.size() != header["global_dim"].get<std::size_t>()) {
    throw FormatError("feature bundle global vector does not match header");
  }
  p.global = g.storage();
  return p;
}

inline void save_pyramid(const std::string& path, const FeaturePyramid& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write feature bundle " + path);
  save_pyramid(os, p);
}

inline FeaturePyramid load_pyramid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read feature bundle " + path);
  return load_pyramid(is);
}

// ---------------------------------------------------------------------------
// Low/high-level maps

/// Resizes a map to the target extent: nearest upsampling when smaller, 2x2
/// average pooling when larger. Extents must differ by a power of two.
inline Tensor resample_to(const Tensor& map, std::size_t height, std::size_t width) {
  Tensor x = map;
  while (x.extent(1) > height || x.extent(2) > width) x = avg_pool2(x);
  if (x.extent(1) < height) {
    const std::size_t f = height / x.extent(1);
    x = upsample_nearest(x, f);
  }
  if (x.extent(1) != height || x.extent(2) != width) {
    throw DimensionError("cannot resample " + detail::shape_str(map.shape()) + " to " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  return x;
}

struct LowHigh {
  Tensor low;   // v^(l)
  Tensor high;  // v^(h)
};

/// Stages 1-3 brought to the stage-3 extent and concatenated; stages 4-5 to the
/// stage-4 extent.
inline LowHigh build_low_high(const FeaturePyramid& p) {
  const std::size_t h3 = p.stages[2].extent(1), w3 = p.stages[2].extent(2);
  const std::size_t h4 = p.stages[3].extent(1), w4 = p.stages[3].extent(2);
  const std::array<Tensor, 3> low{resample_to(p.stages[0], h3, w3), resample_to(p.stages[1], h3, w3), p.stages[2]};
  const std::array<Tensor, 2> high{p.stages[3], resample_to(p.stages[4], h4, w4)};
  return {concat_channels(std::span<const Tensor>(low)), concat_channels(std::span<const Tensor>(high))};
}

// ---------------------------------------------------------------------------
// MVSA

struct MvsaParams {
  Tensor low_kernels;   // [L x C_low x 3 x 3]
  Tensor low_bias;      // [L]
  double low_slope = 0.25;
  Tensor high_kernels;  // [K x C_high x 1 x 1]
  Tensor high_bias;     // [K]
  double high_slope = 0.25;
  Tensor info_kernels;  // [I x (L+K) x 1 x 1]
  Tensor info_bias;     // [I]
  Tensor gate_kernels;  // [I x (L+K) x 1 x 1]
  Tensor gate_bias;     // [I]
  Tensor mask_projection;  // [D x I*h*w]
  Tensor mask_bias;        // [D]

  static MvsaParams zeros(std::size_t low_in, std::size_t high_in, std::size_t low_out, std::size_t high_out,
                          std::size_t info, std::size_t spatial, std::size_t global_dim) {
    MvsaParams p;
    p.low_kernels = Tensor({low_out, low_in, 3, 3});
    p.low_bias = Tensor({low_out});
    p.high_kernels = Tensor({high_out, high_in, 1, 1});
    p.high_bias = Tensor({high_out});
    p.info_kernels = Tensor({info, low_out + high_out, 1, 1});
    p.info_bias = Tensor({info});
    p.gate_kernels = Tensor({info, low_out + high_out, 1, 1});
    p.gate_bias = Tensor({info});
    p.mask_projection = Tensor({global_dim, info * spatial});
    p.mask_bias = Tensor({global_dim});
    return p;
  }

  static MvsaParams random(std::size_t low_in, std::size_t high_in, std::size_t low_out, std::size_t high_out,
                           std::size_t info, std::size_t spatial, std::size_t global_dim, Rng& rng) {
    MvsaParams p;
    const std::size_t joint = low_out + high_out;
    p.low_kernels = rng.normal_tensor({low_out, low_in, 3, 3}, std::sqrt(2.0 / static_cast<double>(low_in * 9)));
    p.low_bias = Tensor({low_out});
    p.high_kernels = rng.normal_tensor({high_out, high_in, 1, 1}, std::sqrt(2.0 / static_cast<double>(high_in)));
    p.high_bias = Tensor({high_out});
    p.info_kernels = rng.normal_tensor({info, joint, 1, 1}, 1.0 / std::sqrt(static_cast<double>(joint)));
    p.info_bias = Tensor({info});
    p.gate_kernels = rng.normal_tensor({info, joint, 1, 1}, 1.0 / std::sqrt(static_cast<double>(joint)));
    p.gate_bias = Tensor({info});
    p.mask_projection = rng.normal_tensor({global_dim, info * spatial}, 4.0 / std::sqrt(static_cast<double>(info * spatial)));
    p.mask_bias = Tensor({global_dim});
    return p;
  }
};

/// v^(lh) = Mean(v^(h)) + Cat(v^(l)', v^(h)'), where the low path is a 3x3 conv
/// followed by 2x2 average pooling and PReLU, and the high path a 1x1 conv and
/// PReLU. The channel mean of v^(h) is broadcast over every output channel.
inline Tensor multiscale_fuse(const Tensor& low, const Tensor& high, const MvsaParams& params) {
  Tensor low_hat = activate(avg_pool2(conv2d(low, params.low_kernels, params.low_bias.values())),
                            Activation::prelu(params.low_slope));
  Tensor high_hat = activate(conv2d(high, params.high_kernels, params.high_bias.values()),
                             Activation::prelu(params.high_slope));
  if (low_hat.extent(1) != high_hat.extent(1) || low_hat.extent(2) != high_hat.extent(2)) {
    throw DimensionError("multiscale_fuse: transformed maps disagree, " + detail::shape_str(low_hat.shape()) +
                         " vs " + detail::shape_str(high_hat.shape()));
  }
  Tensor joint = concat_channels({std::move(low_hat), std::move(high_hat)});
  const Tensor mean = mean_channel(high);
  const std::size_t hw = mean.size();
  for (std::size_t c = 0; c < joint.extent(0); ++c)
    for (std::size_t i = 0; i < hw; ++i) joint[c * hw + i] += mean[i];
  return joint;
}

struct FilteredFeatures {
  Tensor info;      // v^(i)
  Tensor gate;      // v^(w)
  Tensor filtered;  // v^(i) * v^(w)
};

/// Channel-wise L2 normalization per pixel, then two independent 1x1 convs; the
/// sigmoid branch gates the information branch.
inline FilteredFeatures redundancy_filter(const Tensor& joint, const MvsaParams& params) {
  const Tensor normed = l2_normalize(joint, 0);
  FilteredFeatures out;
  out.info = conv2d(normed, params.info_kernels, params.info_bias.values());
  out.gate = activate(conv2d(normed, params.gate_kernels, params.gate_bias.values()), Activation::sigmoid());
  out.filtered = hadamard(out.info, out.gate);
  return out;
}

struct SalientVisual {
  std::vector<double> mask;      // in (0,1)
  std::vector<double> features;  // F_v = v^(g) * mask
};

inline SalientVisual salient_mask(const Tensor& filtered, std::span<const double> global, const MvsaParams& params) {
  if (params.mask_projection.extent(1) != filtered.size()) {
    throw DimensionError("salient_mask: projection " + detail::shape_str(params.mask_projection.shape()) +
                         " cannot take a flattened map of " + detail::shape_str(filtered.shape()));
  }
  if (params.mask_projection.extent(0) != global.size()) {
    throw DimensionError("salient_mask: projection yields " + std::to_string(params.mask_projection.extent(0)) +
                         " values for a global vector of length " + std::to_string(global.size()));
  }
  SalientVisual out;
  out.mask = matvec(params.mask_projection, filtered.values());
  out.features.resize(global.size());
  for (std::size_t i = 0; i < out.mask.size(); ++i) {
    out.mask[i] = sigmoid(out.mask[i] + params.mask_bias[i]);
    out.features[i] = global[i] * out.mask[i];
  }
  return out;
}

struct MvsaOutput {
  SalientVisual salient;
  Tensor spatial;  // v-hat^(i), kept for inspection
};

inline MvsaOutput mvsa_forward(const FeaturePyramid& pyramid, const MvsaParams& params) {
  const LowHigh lh = build_low_high(pyramid);
  const Tensor joint = multiscale_fuse(lh.low, lh.high, params);
  FilteredFeatures f = redundancy_filter(joint, params);
  SalientVisual s = salient_mask(f.filtered, pyramid.global, params);
  return {std::move(s), std::move(f.filtered)};
}

}  // namespace amfmn
