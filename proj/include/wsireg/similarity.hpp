#pragma once

/// @file similarity.hpp
/// Similarity measures: global normalized cross-correlation for the affine
/// stage and a 4-neighbourhood self-similarity (MIND-style) descriptor whose
/// sum of squared differences drives the deformable stage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wsireg/field.hpp"
#include "wsireg/raster.hpp"

namespace wsireg {

/// Minimum number of masked samples for a meaningful correlation.
inline constexpr std::size_t kMinNccSamples = 16;

/// Pearson correlation of two equally long sample sequences, restricted to
/// entries where `mask` is non-zero (when given). Returns 0 if either side has
/// zero variance or, with a mask, fewer than kMinNccSamples samples survive.
template <typename A, typename B>
double ncc(std::span<const A> a, std::span<const B> b, std::span<const std::uint8_t> mask = {}) {
  if (a.size() != b.size()) throw_argument("ncc: sample counts differ");
  if (!mask.empty() && mask.size() != a.size()) throw_argument("ncc: mask size differs");
  double sa = 0, sb = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    sa += a[i];
    sb += b[i];
    ++n;
  }
  if (n < 2 || (!mask.empty() && n < kMinNccSamples)) return 0.0;
  const double ma = sa / n, mb = sb / n;
  double vaa = 0, vbb = 0, vab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double da = a[i] - ma, db = b[i] - mb;
    vaa += da * da;
    vbb += db * db;
    vab += da * db;
  }
  if (vaa <= 0 || vbb <= 0) return 0.0;
  return std::clamp(vab / std::sqrt(vaa * vbb), -1.0, 1.0);
}

inline double ncc_global(const Raster& a, const Raster& b, const Raster* mask = nullptr) {
  if (a.width() != b.width() || a.height() != b.height()) throw_argument("ncc_global: dimension mismatch");
  if (a.channels() != 1 || b.channels() != 1) throw_argument("ncc_global expects single-channel rasters");
  std::span<const std::uint8_t> m;
  if (mask) {
    if (mask->width() != a.width() || mask->height() != a.height() || mask->channels() != 1) {
      throw_argument("ncc_global: mask dimension mismatch");
    }
    m = mask->bytes();
  }
  return ncc<std::uint8_t, std::uint8_t>(a.bytes(), b.bytes(), m);
}

/// Four self-similarity channels per pixel, ordered (0,-1), (0,1), (-1,0), (1,0).
struct DescriptorImage {
  static constexpr int kChannels = 4;
  int width = 0;
  int height = 0;
  std::vector<float> values;  ///< interleaved, width*height*4

  float at(int x, int y, int c) const noexcept {
    return values[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }
  const float* pixel(int x, int y) const noexcept {
    return values.data() + (static_cast<std::size_t>(y) * width + x) * kChannels;
  }
  bool same_shape(const DescriptorImage& o) const noexcept { return width == o.width && height == o.height; }
};

struct MindOptions {
  double epsilon = 1e-5 * 255.0 * 255.0;  ///< floor on the local variance estimate
};

inline constexpr int kMindOffsets[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};

/// d_n(x) = sum over the 3x3 patch of (I(x+o) - I(x+n+o))^2 with clamp-to-edge
/// reads; channel_n = exp(-d_n / max(mean_n d_n, eps)), then divided by the
/// per-pixel maximum. Above the floor, a*I + b gives the same descriptor as I.
inline DescriptorImage mind_descriptors(const Raster& r, const MindOptions& opt = {}) {
  if (r.channels() != 1) throw_argument("mind_descriptors expects a single-channel raster");
  if (r.width() < 8 || r.height() < 8) throw_argument("mind_descriptors: raster must be at least 8x8");
  const int w = r.width(), h = r.height();
  // Edge-replicated copy with a 2-pixel border: E(p) = I(clamp(p)).
  const int pw = w + 4, ph = h + 4;
  std::vector<double> ext(static_cast<std::size_t>(pw) * ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::clamp(y - 2, 0, h - 1);
    for (int x = 0; x < pw; ++x) ext[static_cast<std::size_t>(y) * pw + x] = r.at(std::clamp(x - 2, 0, w - 1), sy);
  }
  DescriptorImage out{w, h, std::vector<float>(static_cast<std::size_t>(w) * h * 4)};
  std::vector<double> dist(static_cast<std::size_t>(w) * h * 4);
  // Squared differences over [-1, w] x [-1, h], then a separable 3x3 box sum.
  const int dw = w + 2, dh = h + 2;
  std::vector<double> sq(static_cast<std::size_t>(dw) * dh), rows(static_cast<std::size_t>(dw) * h);
  for (int n = 0; n < 4; ++n) {
    const int ox = kMindOffsets[n][0], oy = kMindOffsets[n][1];
    for (int y = 0; y < dh; ++y) {
      const double* a = ext.data() + static_cast<std::size_t>(y + 1) * pw + 1;
      const double* b = ext.data() + static_cast<std::size_t>(y + 1 + oy) * pw + 1 + ox;
      double* d = sq.data() + static_cast<std::size_t>(y) * dw;
      for (int x = 0; x < dw; ++x) {
        const double t = a[x] - b[x];
        d[x] = t * t;
      }
    }
    for (int y = 0; y < h; ++y) {
      const double* s0 = sq.data() + static_cast<std::size_t>(y) * dw;
      const double* s1 = s0 + dw;
      const double* s2 = s1 + dw;
      double* o = rows.data() + static_cast<std::size_t>(y) * dw;
      for (int x = 0; x < dw; ++x) o[x] = s0[x] + s1[x] + s2[x];
    }
    for (int y = 0; y < h; ++y) {
      const double* o = rows.data() + static_cast<std::size_t>(y) * dw;
      for (int x = 0; x < w; ++x) {
        dist[(static_cast<std::size_t>(y) * w + x) * 4 + n] = o[x] + o[x + 1] + o[x + 2];
      }
    }
  }
  for (std::size_t p = 0; p < static_cast<std::size_t>(w) * h; ++p) {
    const double* d = dist.data() + p * 4;
    const double v = std::max(0.25 * (d[0] + d[1] + d[2] + d[3]), opt.epsilon);
    double e[4], mx = 0;
    for (int n = 0; n < 4; ++n) {
      e[n] = std::exp(-d[n] / v);
      mx = std::max(mx, e[n]);
    }
    for (int n = 0; n < 4; ++n) out.values[p * 4 + n] = static_cast<float>(e[n] / mx);
  }
  return out;
}

/// Bilinear sample of all 4 channels at (x, y), clamped to the image.
inline void sample_descriptor(const DescriptorImage& d, double x, double y, double out[4]) {
  x = std::clamp(x, 0.0, d.width - 1.0);
  y = std::clamp(y, 0.0, d.height - 1.0);
  const int i0 = static_cast<int>(x), j0 = static_cast<int>(y);
  const int i1 = std::min(i0 + 1, d.width - 1), j1 = std::min(j0 + 1, d.height - 1);
  const double tx = x - i0, ty = y - j0;
  const float* p00 = d.pixel(i0, j0);
  const float* p10 = d.pixel(i1, j0);
  const float* p01 = d.pixel(i0, j1);
  const float* p11 = d.pixel(i1, j1);
  for (int c = 0; c < 4; ++c) {
    const double top = p00[c] + tx * (p10[c] - p00[c]);
    const double bot = p01[c] + tx * (p11[c] - p01[c]);
    out[c] = top + ty * (bot - top);
  }
}

/// Mean over pixels of the squared descriptor difference between fixed and
/// the moving descriptors sampled at x + u(x) / scale (bilinear, clamped).
/// `field` must share the descriptor grid; `scale` is level-0 pixels per
/// descriptor pixel.
inline double mind_data_cost(const DescriptorImage& df, const DescriptorImage& dm, const DisplacementField& field,
                             double scale) {
  if (!df.same_shape(dm)) throw_argument("mind_data_cost: descriptor dimension mismatch");
  if (field.grid_width() != df.width || field.grid_height() != df.height) {
    throw_argument("mind_data_cost: field grid does not match the descriptor grid");
  }
  const double inv = 1.0 / scale;
  const double* u = field.raw().data();
  double total = 0;
  for (int y = 0; y < df.height; ++y) {
    double row = 0;
    for (int x = 0; x < df.width; ++x, u += 2) {
      double s[4];
      sample_descriptor(dm, x + u[0] * inv, y + u[1] * inv, s);
      const float* f = df.pixel(x, y);
      for (int c = 0; c < 4; ++c) {
        const double t = s[c] - f[c];
        row += t * t;
      }
    }
    total += row;
  }
  return total / (static_cast<double>(df.width) * df.height);
}

}  // namespace wsireg
