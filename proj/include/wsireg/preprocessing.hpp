#pragma once

/// @file preprocessing.hpp
/// Turns a slide pair into same-sized, same-scale, single-channel rasters at
/// registration resolution: resample, grayscale, percentile stretch with
/// inversion (tissue bright, glass dark), zero padding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "wsireg/pyramid_io.hpp"
#include "wsireg/raster.hpp"

namespace wsireg {

/// Rec. 601 luma; single-channel input passes through.
inline Raster to_grayscale(const Raster& r) {
  if (r.channels() == 1) return r;
  Raster out(r.width(), r.height(), 1);
  const std::uint8_t* src = r.data();
  std::uint8_t* dst = out.data();
  const std::size_t n = static_cast<std::size_t>(r.width()) * r.height();
  for (std::size_t i = 0; i < n; ++i, src += 3) {
    dst[i] = to_u8(0.299 * src[0] + 0.587 * src[1] + 0.114 * src[2]);
  }
  return out;
}

struct NormalizeOptions {
  double low_percentile = 1.0;
  double high_percentile = 99.0;
};

struct NormalizedRaster {
  Raster image;
  bool degenerate = false;  ///< low and high percentiles coincided
  int low = 0;
  int high = 0;
};

/// Nearest-rank percentile of an 8-bit histogram: the smallest value whose
/// cumulative count reaches ceil(q/100 * n).
inline int histogram_percentile(const std::array<std::uint64_t, 256>& hist, std::uint64_t n, double q) {
  const auto rank = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(q / 100.0 * static_cast<double>(n))));
  std::uint64_t cum = 0;
  for (int v = 0; v < 256; ++v) {
    cum += hist[static_cast<std::size_t>(v)];
    if (cum >= rank) return v;
  }
  return 255;
}

/// 255 - stretch(r), where stretch maps [p_low, p_high] linearly onto [0, 255]
/// with clamping. A constant input yields all zeros and sets `degenerate`.
inline NormalizedRaster normalize_intensity(const Raster& r, const NormalizeOptions& opt = {}) {
  if (r.channels() != 1) throw_argument("normalize_intensity expects a single-channel raster");
  if (!(opt.low_percentile >= 0 && opt.low_percentile < opt.high_percentile && opt.high_percentile <= 100)) {
    throw_argument("normalize_intensity: percentiles must satisfy 0 <= low < high <= 100");
  }
  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : r.bytes()) ++hist[v];
  const std::uint64_t n = r.size_bytes();
  NormalizedRaster out;
  out.image = Raster(r.width(), r.height(), 1, 0);
  if (n == 0) {
    out.degenerate = true;
    return out;
  }
  out.low = histogram_percentile(hist, n, opt.low_percentile);
  out.high = histogram_percentile(hist, n, opt.high_percentile);
  if (out.high <= out.low) {
    out.degenerate = true;
    return out;
  }
  std::array<std::uint8_t, 256> lut{};
  const double gain = 255.0 / (out.high - out.low);
  for (int v = 0; v < 256; ++v) {
    lut[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(255 - to_u8((v - out.low) * gain));
  }
  const std::uint8_t* src = r.data();
  std::uint8_t* dst = out.image.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] = lut[src[i]];
  return out;
}

struct PreprocessOptions {
  NormalizeOptions normalize;
};

struct PreprocessedPair {
  Raster fixed;   ///< 1 channel, tissue bright
  Raster moving;  ///< 1 channel, same dims as fixed
  double scale = 1;  ///< level-0 pixels per preprocessed pixel, both images and both axes
  int fixed_width = 0, fixed_height = 0;    ///< unpadded extents
  int moving_width = 0, moving_height = 0;
  long long fixed_level0_width = 0, fixed_level0_height = 0;
  bool fixed_degenerate = false;
  bool moving_degenerate = false;
};

/// Coarsest level k with 2^k <= scale, i.e. the smallest level that still
/// has at least the resolution needed after resampling.
inline int level_for_scale(const PyramidImage& img, double scale) {
  int k = 0;
  while (k + 1 < img.num_levels() && std::ldexp(1.0, k + 1) <= scale * (1 + 1e-12)) ++k;
  return k;
}

/// Reads `img` so that output pixel i lies at level-0 coordinate scale * i.
/// Level-k pixel j is the box mean centered at 2^k * j + (2^k - 1) / 2, hence
/// the offset passed to the resampler.
inline Raster read_at_scale(const PyramidImage& img, double scale) {
  const int k = level_for_scale(img, scale);
  Raster lv = read_level(img, k);
  const double factor = std::ldexp(1.0, k) / scale;
  const double offset = -0.5 * (1.0 - std::ldexp(1.0, -k));
  return resample(lv, factor, offset);
}

inline PreprocessedPair preprocess_pair(const PyramidImage& fixed, const PyramidImage& moving, int target_long_side,
                                        const PreprocessOptions& opt = {}) {
  if (target_long_side < 64) throw_argument("preprocess_pair: target long side must be >= 64");
  const long long long_side =
      std::max({fixed.width(), fixed.height(), moving.width(), moving.height()});
  PreprocessedPair pair;
  pair.scale = static_cast<double>(long_side) / target_long_side;

  auto prepare = [&](const PyramidImage& img, bool& degenerate) {
    Raster gray = to_grayscale(read_at_scale(img, pair.scale));
    NormalizedRaster n = normalize_intensity(gray, opt.normalize);
    degenerate = n.degenerate;
    return std::move(n.image);
  };
  Raster f = prepare(fixed, pair.fixed_degenerate);
  Raster m = prepare(moving, pair.moving_degenerate);
  pair.fixed_level0_width = fixed.width();
  pair.fixed_level0_height = fixed.height();
  pair.fixed_width = f.width();
  pair.fixed_height = f.height();
  pair.moving_width = m.width();
  pair.moving_height = m.height();
  auto [pf, pm] = pad_to_common(f, m, 0);
  pair.fixed = std::move(pf);
  pair.moving = std::move(pm);
  return pair;
}

}  // namespace wsireg
