// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors and the handful of kernels the matching
// network needs. Everything here is a pure function of its inputs and uses a
// fixed accumulation order, so equal inputs give bit-identical outputs.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amfmn/error.hpp"

namespace amfmn {

using Shape = std::vector<std::size_t>;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + detail::shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// SplitMix64 stream. Identical seeds give identical sequences on every
// platform, which std::normal_distribution does not guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) noexcept {
    return n == 0 ? 0 : static_cast<std::size_t>(next_u64() % n);
  }

  double normal() noexcept {
    // Box-Muller; the spare value is discarded to keep the stream stateless.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = uniform(lo, hi);
    return t;
  }

  Tensor normal_tensor(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = stddev * normal();
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

  /// Derive an independent child stream; used to give each parameter block its own seed.
  Rng fork(std::uint64_t salt) noexcept { return Rng(next_u64() ^ (salt * 0xD1B54A32D192ED03ull)); }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: cannot multiply " + detail::shape_str(a.shape()) + " by " +
                         detail::shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * b[p * n + j];
    }
  }
  return out;
}

/// y = W x for W of shape [out x in] and x of length in.
inline std::vector<double> matvec(const Tensor& w, std::span<const double> x) {
  if (w.rank() != 2 || w.extent(1) != x.size()) {
    throw DimensionError("matvec: matrix " + detail::shape_str(w.shape()) +
                         " does not accept a vector of length " + std::to_string(x.size()));
  }
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = w.values().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Feature-map kernels (all maps are C x H x W)

/// Stride-1 cross-correlation with zero "same" padding. `bias` may be empty.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::span<const double> bias = {}) {
  if (input.rank() != 3 || kernels.rank() != 4) {
    throw DimensionError("conv2d: expected CxHxW input and KxCxsxs kernels, got " +
                         detail::shape_str(input.shape()) + " and " +
                         detail::shape_str(kernels.shape()));
  }
  const std::size_t channels = input.extent(0), height = input.extent(1), width = input.extent(2);
  const std::size_t out_channels = kernels.extent(0), side = kernels.extent(2);
  if (kernels.extent(1) != channels) {
    throw DimensionError("conv2d: kernels " + detail::shape_str(kernels.shape()) +
                         " do not match input channels of " + detail::shape_str(input.shape()));
  }
  if ((side != 1 && side != 3) || kernels.extent(3) != side) {
    throw DimensionError("conv2d: kernel side must be 1 or 3, got " +
                         detail::shape_str(kernels.shape()));
  }
  if (!bias.empty() && bias.size() != out_channels) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.size()) +
                         " does not match " + std::to_string(out_channels) + " kernels");
  }
  const long pad = static_cast<long>(side / 2);
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  Tensor out({out_channels, height, width});
  const double* in = input.values().data();
  for (std::size_t k = 0; k < out_channels; ++k) {
    double* dst = out.values().data() + k * height * width;
    if (!bias.empty()) std::fill(dst, dst + height * width, bias[k]);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = in + c * height * width;
      for (std::size_t ky = 0; ky < side; ++ky) {
        for (std::size_t kx = 0; kx < side; ++kx) {
          const double wgt = kernels[((k * channels + c) * side + ky) * side + kx];
          if (wgt == 0.0) continue;
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min(h, h - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
          for (long y = y0; y < y1; ++y) {
            double* drow = dst + y * w;
            const double* srow = src + (y + dy) * w + dx;
            for (long x = x0; x < x1; ++x) drow[x] += wgt * srow[x];
          }
        }
      }
    }
  }
  return out;
}

inline Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  if (factor == 0) throw ValidationError("upsample_nearest: factor must be positive");
  if (input.rank() != 3) {
    throw DimensionError("upsample_nearest: expected CxHxW, got " + detail::shape_str(input.shape()));
  }
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  Tensor out({c, h * factor, w * factor});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * factor; ++y)
      for (std::size_t x = 0; x < w * factor; ++x) out.at(ch, y, x) = input.at(ch, y / factor, x / factor);
  return out;
}

/// 2x2 average pooling, stride 2. Odd trailing rows/columns average the pixels that exist.
inline Tensor avg_pool2(const Tensor& input) {
  if (input.rank() != 3) {
    throw DimensionError("avg_pool2: expected CxHxW, got " + detail::shape_str(input.shape()));
  }
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        int n = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t sy = 2 * y + dy, sx = 2 * x + dx;
            if (sy < h && sx < w) {
              acc += input.at(ch, sy, sx);
              ++n;
            }
          }
        out.at(ch, y, x) = acc / n;
      }
    }
  }
  return out;
}

inline Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const std::size_t h = parts[0].extent(1), w = parts[0].extent(2);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 3 || p.extent(1) != h || p.extent(2) != w) {
      throw DimensionError("concat_channels: spatial extents differ, " +
                           detail::shape_str(parts[0].shape()) + " vs " + detail::shape_str(p.shape()));
    }
    total += p.extent(0);
  }
  std::vector<double> data;
  data.reserve(total * h * w);
  for (const Tensor& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor({total, h, w}, std::move(data));
}

inline Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}

// ---------------------------------------------------------------------------
// Elementwise

struct Activation {
  enum class Kind { prelu, sigmoid, tanh };
  Kind kind;
  double slope = 0.25;

  static Activation prelu(double a) { return {Kind::prelu, a}; }
  static Activation sigmoid() { return {Kind::sigmoid}; }
  static Activation tanh() { return {Kind::tanh}; }
};

inline double sigmoid(double x) noexcept {
  // Split by sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double prelu(double x, double slope) noexcept { return x >= 0.0 ? x : slope * x; }

inline Tensor activate(Tensor x, Activation act) {
  for (double& v : x.values()) {
    switch (act.kind) {
      case Activation::Kind::prelu: v = prelu(v, act.slope); break;
      case Activation::Kind::sigmoid: v = sigmoid(v); break;
      case Activation::Kind::tanh: v = std::tanh(v); break;
    }
  }
  return x;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("hadamard: shapes " + detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline constexpr double kNormEpsilon = 1e-12;

/// Normalizes every slice along `axis` to unit Euclidean norm. Slices whose norm
/// does not exceed 1e-12 become zero.
inline Tensor l2_normalize(Tensor x, std::size_t axis = 0) {
  if (axis >= x.rank()) {
    throw DimensionError("l2_normalize: axis " + std::to_string(axis) + " out of range for " +
                         detail::shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  const std::size_t n = x.extent(axis);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = x[(o * n + i) * inner + in];
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      const double scale = norm > kNormEpsilon ? 1.0 / norm : 0.0;
      for (std::size_t i = 0; i < n; ++i) x[(o * n + i) * inner + in] *= scale;
    }
  }
  return x;
}

inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double norm = norm2(v);
  std::vector<double> out(v.begin(), v.end());
  const double scale = norm > kNormEpsilon ? 1.0 / norm : 0.0;
  for (double& x : out) x *= scale;
  return out;
}

inline Tensor mean_channel(const Tensor& x) {
  if (x.rank() != 3 || x.empty()) {
    throw DimensionError("mean_channel: expected nonempty CxHxW, got " + detail::shape_str(x.shape()));
  }
  const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
  Tensor out({1, x.extent(1), x.extent(2)});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) out[i] += x[ch * hw + i];
  for (double& v : out.values()) v /= static_cast<double>(c);
  return out;
}

inline double mean_all(const Tensor& x) {
  if (x.empty()) throw DimensionError("mean_all: empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return acc / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Verification

/// Central-difference gradient of a scalar function.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-5) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw ValidationError("finite_diff_grad: function is not finite near element " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// XTEN binary format: "XTEN", u32 rank, u64 extents, f64 payload, all little-endian.

namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, bytes);
}

inline std::uint64_t get_le(std::istream& is, int bytes, const char* what) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) {
    throw FormatError(std::string("truncated stream while reading ") + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kMaxTensorRank = 8;

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("XTEN", 4);
  detail::put_le(os, t.rank(), 4);
  for (std::size_t e : t.shape()) detail::put_le(os, e, 8);
  for (double v : t.values()) detail::put_le(os, std::bit_cast<std::uint64_t>(v), 8);
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("truncated stream: missing XTEN magic");
  if (std::string(magic, 4) != "XTEN") throw FormatError("bad tensor magic, expected XTEN");
  const auto rank = static_cast<std::uint32_t>(detail::get_le(is, 4, "tensor rank"));
  if (rank == 0 || rank > kMaxTensorRank) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = detail::get_le(is, 8, "tensor extent");
    if (e == 0 || e > (std::size_t{1} << 32)) throw FormatError("implausible tensor extent " + std::to_string(e));
    n *= e;
    if (n > (std::size_t{1} << 34)) throw FormatError("tensor too large");
  }
  // Grow while reading so a corrupt extent cannot force a huge allocation.
  std::vector<double> data;
  data.reserve(std::min<std::size_t>(n, std::size_t{1} << 20));
  for (std::size_t i = 0; i < n; ++i) data.push_back(std::bit_cast<double>(detail::get_le(is, 8, "tensor payload")));
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace amfmn
