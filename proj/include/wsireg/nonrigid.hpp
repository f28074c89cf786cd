#pragma once

/// @file nonrigid.hpp
/// Multi-resolution dense displacement optimization on self-similarity
/// descriptors. Each iteration takes a gradient step on the descriptor SSD,
/// Gaussian-smooths the whole field (the only regularizer), and keeps the
/// result only if the data cost did not rise, halving the step otherwise.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wsireg/affine.hpp"
#include "wsireg/field.hpp"
#include "wsireg/preprocessing.hpp"
#include "wsireg/similarity.hpp"

namespace wsireg {

struct LevelSpec {
  int factor = 1;  ///< downsampling of the registration raster
  int iterations = 0;
  double step = 0.5;
  double sigma = 2.0;  ///< Gaussian smoothing of the field, grid pixels
};

struct LevelSchedule {
  std::vector<LevelSpec> levels;

  static LevelSchedule standard(std::vector<int> iterations = {100, 100, 50}, double step = 0.5, double sigma = 2.0) {
    LevelSchedule s;
    int factor = 1 << (iterations.size() - 1);
    for (int it : iterations) {
      s.levels.push_back({factor, it, step, sigma});
      factor /= 2;
    }
    return s;
  }

  int coarsest_factor() const { return levels.empty() ? 1 : levels.front().factor; }

  void validate() const {
    if (levels.empty()) throw_argument("level schedule is empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const LevelSpec& l = levels[i];
      if (l.factor < 1) throw_argument("level factors must be >= 1");
      if (i > 0 && l.factor >= levels[i - 1].factor) throw_argument("level factors must strictly decrease");
      if (l.iterations < 0) throw_argument("level iterations must be >= 0");
      if (!(l.step > 0)) throw_argument("level step must be positive");
      if (!(l.sigma >= 0)) throw_argument("level sigma must be non-negative");
    }
    if (levels.back().factor != 1) throw_argument("the finest level must have factor 1");
  }
};

/// Bilinear resampling of the field onto a finer grid over the same level-0
/// domain. Values are level-0 offsets, so they are carried over unchanged.
inline DisplacementField upsample_field(const DisplacementField& f, int new_width, int new_height) {
  if (new_width < f.grid_width() || new_height < f.grid_height()) {
    throw_argument("upsample_field cannot shrink a " + std::to_string(f.grid_width()) + "x" +
                   std::to_string(f.grid_height()) + " grid");
  }
  DisplacementField out(new_width, new_height, f.level0_width(), f.level0_height());
  for (int j = 0; j < new_height; ++j) {
    for (int i = 0; i < new_width; ++i) {
      const Point p = out.node(i, j);
      out.set(i, j, sample_displacement(f, p.x, p.y));
    }
  }
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian smoothing of both components, replicate borders.
inline void gaussian_smooth_field(DisplacementField& f, double sigma) {
  if (sigma <= 0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int w = f.grid_width(), h = f.grid_height();
  std::vector<double>& u = f.raw();
  std::vector<double> tmp(u.size());
  std::vector<double> line(static_cast<std::size_t>(std::max(w, h) + 2 * r) * 2);
  for (int y = 0; y < h; ++y) {
    const double* src = u.data() + static_cast<std::size_t>(y) * w * 2;
    for (int x = -r; x < w + r; ++x) {
      const int cx = std::clamp(x, 0, w - 1);
      line[static_cast<std::size_t>(x + r) * 2] = src[cx * 2];
      line[static_cast<std::size_t>(x + r) * 2 + 1] = src[cx * 2 + 1];
    }
    double* dst = tmp.data() + static_cast<std::size_t>(y) * w * 2;
    for (int x = 0; x < w; ++x) {
      double ax = 0, ay = 0;
      const double* l = line.data() + static_cast<std::size_t>(x) * 2;
      for (std::size_t t = 0; t < k.size(); ++t) {
        ax += k[t] * l[t * 2];
        ay += k[t] * l[t * 2 + 1];
      }
      dst[x * 2] = ax;
      dst[x * 2 + 1] = ay;
    }
  }
  // Vertical pass row by row for cache friendliness.
  std::fill(u.begin(), u.end(), 0.0);
  for (int y = 0; y < h; ++y) {
    double* dst = u.data() + static_cast<std::size_t>(y) * w * 2;
    for (int t = -r; t <= r; ++t) {
      const int sy = std::clamp(y + t, 0, h - 1);
      const double kt = k[static_cast<std::size_t>(t + r)];
      const double* src = tmp.data() + static_cast<std::size_t>(sy) * w * 2;
      for (int x = 0; x < w * 2; ++x) dst[x] += kt * src[x];
    }
  }
}

/// Moving descriptors with their central-difference gradients, interleaved
/// per pixel as 4 values, 4 d/dx, 4 d/dy.
struct DescriptorGradients {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  explicit DescriptorGradients(const DescriptorImage& d) : width(d.width), height(d.height) {
    data.resize(static_cast<std::size_t>(width) * height * 12);
    for (int y = 0; y < height; ++y) {
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, height - 1);
      for (int x = 0; x < width; ++x) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, width - 1);
        float* o = data.data() + (static_cast<std::size_t>(y) * width + x) * 12;
        for (int c = 0; c < 4; ++c) {
          o[c] = d.at(x, y, c);
          o[4 + c] = 0.5f * (d.at(xp, y, c) - d.at(xm, y, c));
          o[8 + c] = 0.5f * (d.at(x, yp, c) - d.at(x, ym, c));
        }
      }
    }
  }

  /// Bilinear sample of all 12 values at (x, y), clamped.
  void sample(double x, double y, double out[12]) const {
    x = std::clamp(x, 0.0, width - 1.0);
    y = std::clamp(y, 0.0, height - 1.0);
    const int i0 = static_cast<int>(x), j0 = static_cast<int>(y);
    const int i1 = std::min(i0 + 1, width - 1), j1 = std::min(j0 + 1, height - 1);
    const double tx = x - i0, ty = y - j0;
    auto at = [&](int i, int j) { return data.data() + (static_cast<std::size_t>(j) * width + i) * 12; };
    const float* p00 = at(i0, j0);
    const float* p10 = at(i1, j0);
    const float* p01 = at(i0, j1);
    const float* p11 = at(i1, j1);
    for (int c = 0; c < 12; ++c) {
      const double top = p00[c] + tx * (p10[c] - p00[c]);
      const double bot = p01[c] + tx * (p11[c] - p01[c]);
      out[c] = top + ty * (bot - top);
    }
  }
};

struct DemonsStep {
  DisplacementField field;
  double cost = 0;
  bool accepted = false;  ///< false: every halving raised the cost, input returned
  int halvings = 0;
};

/// One descent step. `cost_in` is mind_data_cost of `f` (computed if negative).
inline DemonsStep demons_iteration(const DescriptorImage& df, const DescriptorGradients& dm, const DescriptorImage& dm_plain,
                                   const DisplacementField& f, double step, double sigma, double cost_in = -1,
                                   int max_halvings = 10) {
  if (!df.same_shape(dm_plain) || dm.width != df.width || dm.height != df.height) {
    throw_argument("demons_iteration: descriptor dimension mismatch");
  }
  if (f.grid_width() != df.width || f.grid_height() != df.height) {
    throw_argument("demons_iteration: field grid does not match the descriptors");
  }
  const double s = f.scale();
  const double inv = 1.0 / s;
  if (cost_in < 0) cost_in = mind_data_cost(df, dm_plain, f, s);

  // Force in grid units, scaled to level-0 units.
  std::vector<double> force(f.raw().size());
  const double* u = f.raw().data();
  double* g = force.data();
  for (int y = 0; y < df.height; ++y) {
    for (int x = 0; x < df.width; ++x, u += 2, g += 2) {
      double v[12];
      dm.sample(x + u[0] * inv, y + u[1] * inv, v);
      const float* fx = df.pixel(x, y);
      double gx = 0, gy = 0;
      for (int c = 0; c < 4; ++c) {
        const double diff = v[c] - fx[c];
        gx += diff * v[4 + c];
        gy += diff * v[8 + c];
      }
      g[0] = gx * s;
      g[1] = gy * s;
    }
  }

  double trial = step;
  for (int h = 0; h <= max_halvings; ++h, trial *= 0.5) {
    DisplacementField cand = f;
    std::vector<double>& c = cand.raw();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= trial * force[i];
    gaussian_smooth_field(cand, sigma);
    const double cost = mind_data_cost(df, dm_plain, cand, s);
    if (cost <= cost_in) return {std::move(cand), cost, true, h};
  }
  return {f, cost_in, false, max_halvings + 1};
}

/// Convenience overload computing the moving gradients on the spot.
inline DemonsStep demons_iteration(const DescriptorImage& df, const DescriptorImage& dm, const DisplacementField& f,
                                   double step, double sigma) {
  return demons_iteration(df, DescriptorGradients(dm), dm, f, step, sigma);
}

/// Bilinear warp of `moving` by an affine backward map, in raster coordinates.
/// Samples whose source falls outside `moving` get `fill`.
inline Raster warp_raster_affine(const Raster& moving, const AffineTransform& t, int width, int height,
                                 std::uint8_t fill = 0) {
  if (moving.channels() != 1) throw_argument("warp_raster_affine expects a single-channel raster");
  Raster out(width, height, 1, fill);
  const int mw = moving.width(), mh = moving.height();
  for (int y = 0; y < height; ++y) {
    std::uint8_t* dst = out.row(y);
    for (int x = 0; x < width; ++x) {
      const Point s = t.apply({static_cast<double>(x), static_cast<double>(y)});
      if (!(s.x >= 0 && s.y >= 0 && s.x <= mw - 1.0 && s.y <= mh - 1.0)) continue;
      const int i0 = std::min(static_cast<int>(s.x), std::max(mw - 2, 0));
      const int j0 = std::min(static_cast<int>(s.y), std::max(mh - 2, 0));
      const double fx = s.x - i0, fy = s.y - j0;
      const int i1 = std::min(i0 + 1, mw - 1), j1 = std::min(j0 + 1, mh - 1);
      const double top = moving.at(i0, j0) + fx * (moving.at(i1, j0) - moving.at(i0, j0));
      const double bot = moving.at(i0, j1) + fx * (moving.at(i1, j1) - moving.at(i0, j1));
      dst[x] = to_u8(top + fy * (bot - top));
    }
  }
  return out;
}

struct NonrigidTracePoint {
  int level = 0;
  int iteration = 0;  ///< 0 is the cost before the first iteration of the level
  double cost = 0;
};

struct NonrigidOptions {
  MindOptions mind;
};

struct NonrigidResult {
  DisplacementField field;  ///< relative to the affine-prewarped moving image
  std::vector<NonrigidTracePoint> trace;
  double final_cost = 0;
};

/// Pads at the bottom/right so both dimensions are multiples of `m`.
inline Raster pad_to_multiple(const Raster& r, int m, std::uint8_t fill) {
  const int w = (r.width() + m - 1) / m * m, h = (r.height() + m - 1) / m * m;
  if (w == r.width() && h == r.height()) return r;
  Raster out(w, h, r.channels(), fill);
  out.blit(r, 0, 0, r.width(), r.height(), 0, 0);
  return out;
}

/// Bilinear resampling of `f` onto the grid fitted to a level-0 extent at
/// the same node spacing. Used to hand back a field covering exactly the
/// fixed image.
inline DisplacementField refit_field(const DisplacementField& f, long long l0w, long long l0h) {
  const auto [gw, gh] = fitted_grid(l0w, l0h, f.scale());
  DisplacementField out(gw, gh, l0w, l0h);
  for (int j = 0; j < gh; ++j) {
    for (int i = 0; i < gw; ++i) {
      const Point p = out.node(i, j);
      out.set(i, j, sample_displacement(f, p.x, p.y));
    }
  }
  return out;
}

/// Coarse-to-fine descriptor demons on the preprocessed pair after warping
/// the moving raster once by `affine` (level-0 coordinates). Registration
/// runs on rasters padded to a multiple of the coarsest factor; the result
/// is resampled onto the finest-level spacing over the fixed level-0 extent.
inline NonrigidResult run_nonrigid(const PreprocessedPair& pair, const AffineTransform& affine,
                                   const LevelSchedule& schedule, const NonrigidOptions& opt = {}) {
  schedule.validate();
  const AffineTransform pre = affine.rescaled(1.0 / pair.scale);
  const Raster warped = warp_raster_affine(pair.moving, pre, pair.fixed.width(), pair.fixed.height(), 0);
  const int m = schedule.coarsest_factor();
  const Raster fixed = pad_to_multiple(pair.fixed, m, 0);
  const Raster moving = pad_to_multiple(warped, m, 0);
  const auto l0w = std::max<long long>(fixed.width(), std::llround(fixed.width() * pair.scale));
  const auto l0h = std::max<long long>(fixed.height(), std::llround(fixed.height() * pair.scale));

  NonrigidResult res;
  DisplacementField field;
  for (std::size_t li = 0; li < schedule.levels.size(); ++li) {
    const LevelSpec& spec = schedule.levels[li];
    const double factor = 1.0 / spec.factor;
    const Raster lf = spec.factor == 1 ? fixed : resample(fixed, factor);
    const Raster lm = spec.factor == 1 ? moving : resample(moving, factor);
    if (field.empty()) {
      field = DisplacementField(lf.width(), lf.height(), l0w, l0h);
    } else {
      field = upsample_field(field, lf.width(), lf.height());
    }
    const DescriptorImage df = mind_descriptors(lf, opt.mind);
    const DescriptorImage dm = mind_descriptors(lm, opt.mind);
    const DescriptorGradients dmg(dm);
    double cost = mind_data_cost(df, dm, field, field.scale());
    res.trace.push_back({static_cast<int>(li), 0, cost});
    for (int it = 1; it <= spec.iterations; ++it) {
      DemonsStep st = demons_iteration(df, dmg, dm, field, spec.step, spec.sigma, cost);
      res.trace.push_back({static_cast<int>(li), it, st.cost});
      // A rejected step leaves the field untouched, so later iterations would
      // repeat it exactly.
      if (!st.accepted) break;
      field = std::move(st.field);
      cost = st.cost;
    }
    res.final_cost = cost;
  }
  const long long fw = pair.fixed_level0_width > 0 ? pair.fixed_level0_width : l0w;
  const long long fh = pair.fixed_level0_height > 0 ? pair.fixed_level0_height : l0h;
  res.field = refit_field(field, fw, fh);
  return res;
}

}  // namespace wsireg
