#pragma once

/// @file warping.hpp
/// Field algebra (composition with an affine, inversion) and backward warping
/// of pyramid images one output tile at a time.
///
/// Every output pixel q is a pure function of (field, source, q): its source
/// position q + v(q), the 2x2 (or nearest) neighbourhood around it, and the
/// fill value for samples outside the source. Tiles only decide which source
/// window gets read, so any partition of the output gives the same bytes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "wsireg/affine.hpp"
#include "wsireg/field.hpp"
#include "wsireg/pyramid_io.hpp"

namespace wsireg {

/// Total backward map m(x) = A (x + u(x)), returned as v(x) = m(x) - x on the grid of `f`.
inline DisplacementField compose_affine_with_field(const AffineTransform& a, const DisplacementField& f) {
  if (!a.invertible()) throw_numerical("cannot compose with a singular affine transform");
  DisplacementField out(f.grid_width(), f.grid_height(), f.level0_width(), f.level0_height());
  for (int j = 0; j < f.grid_height(); ++j) {
    for (int i = 0; i < f.grid_width(); ++i) {
      const Point p = f.node(i, j);
      out.set(i, j, a.apply(p + f.at(i, j)) - p);
    }
  }
  return out;
}

struct FieldInversion {
  DisplacementField field;
  std::size_t nonconverged = 0;
};

/// Inverse by the fixed-point iteration x <- p - u(x) from x = p at every node.
inline FieldInversion invert_field(const DisplacementField& f, double tol = 0.05, int max_iters = 50) {
  FieldInversion res{DisplacementField(f.grid_width(), f.grid_height(), f.level0_width(), f.level0_height()), 0};
  for (int j = 0; j < f.grid_height(); ++j) {
    for (int i = 0; i < f.grid_width(); ++i) {
      const Point p = f.node(i, j);
      Point x = p;
      bool converged = false;
      for (int it = 0; it < max_iters; ++it) {
        const Point next = p - sample_displacement(f, x.x, x.y);
        const double moved = norm(next - x);
        x = next;
        if (moved < tol) {
          converged = true;
          break;
        }
      }
      if (!converged || !std::isfinite(x.x) || !std::isfinite(x.y)) ++res.nonconverged;
      res.field.set(i, j, x - p);
    }
  }
  return res;
}

enum class Interpolation { bilinear, nearest };

inline std::string to_string(Interpolation i) { return i == Interpolation::bilinear ? "bilinear" : "nearest"; }

inline Interpolation parse_interpolation(const std::string& s) {
  if (s == "bilinear") return Interpolation::bilinear;
  if (s == "nearest") return Interpolation::nearest;
  throw_argument("unknown interpolation '" + s + "' (expected bilinear or nearest)");
}

/// What to warp and how. The field and source are borrowed and must outlive
/// the plan.
struct WarpPlan {
  const DisplacementField* field = nullptr;  ///< total backward map
  const PyramidImage* source = nullptr;
  long long width = 0;   ///< output level-0 dims (the fixed image)
  long long height = 0;
  int tile_size = kDefaultTileSize;
  Interpolation interpolation = Interpolation::bilinear;
  std::uint8_t fill = kWhite;

  void validate() const {
    if (!field || !source) throw_argument("warp plan needs a field and a source");
    if (tile_size <= 0) throw_argument("warp tile size must be positive");
    if (width <= 0 || height <= 0) throw_argument("warp output dimensions must be positive");
  }
};

namespace detail {

/// True when no sample of the interpolation stencil at (x, y) touches the source.
inline bool fully_outside(double x, double y, long long w, long long h, Interpolation interp) {
  if (!(std::isfinite(x) && std::isfinite(y))) return true;
  if (interp == Interpolation::nearest) {
    const double rx = std::floor(x + 0.5), ry = std::floor(y + 0.5);
    return rx < 0 || ry < 0 || rx >= static_cast<double>(w) || ry >= static_cast<double>(h);
  }
  return x <= -1.0 || y <= -1.0 || x >= static_cast<double>(w) || y >= static_cast<double>(h);
}

}  // namespace detail

/// Warps output region (x, y, w, h). Reads only the source window covering
/// the region's source positions plus a 2 px margin; windows larger than 16
/// tile areas are handled by splitting the region.
inline Raster warp_region(const WarpPlan& plan, long long x, long long y, int w, int h, TileCache* cache = nullptr,
                          RegionStats* stats = nullptr) {
  plan.validate();
  if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > plan.width || y + h > plan.height) {
    throw_argument("warp_region: region outside the output");
  }
  const PyramidImage& src = *plan.source;
  const DisplacementField& field = *plan.field;
  const int ch = src.channels();
  const long long sw = src.width(), sh = src.height();

  std::vector<double> pos(static_cast<std::size_t>(w) * h * 2);
  double minx = std::numeric_limits<double>::infinity(), miny = minx;
  double maxx = -minx, maxy = -minx;
  for (int r = 0; r < h; ++r) {
    const double qy = static_cast<double>(y + r);
    for (int c = 0; c < w; ++c) {
      const double qx = static_cast<double>(x + c);
      const Point d = sample_displacement(field, qx, qy);
      const double px = qx + d.x, py = qy + d.y;
      double* o = pos.data() + (static_cast<std::size_t>(r) * w + c) * 2;
      o[0] = px;
      o[1] = py;
      if (detail::fully_outside(px, py, sw, sh, plan.interpolation)) continue;
      minx = std::min(minx, px);
      maxx = std::max(maxx, px);
      miny = std::min(miny, py);
      maxy = std::max(maxy, py);
    }
  }
  Raster out(w, h, ch, plan.fill);
  if (minx > maxx) return out;

  const long long bx0 = std::max(static_cast<long long>(std::floor(minx)) - 2, -2LL);
  const long long by0 = std::max(static_cast<long long>(std::floor(miny)) - 2, -2LL);
  const long long bx1 = std::min(static_cast<long long>(std::floor(maxx)) + 3, sw + 1);
  const long long by1 = std::min(static_cast<long long>(std::floor(maxy)) + 3, sh + 1);
  const long long bw = bx1 - bx0 + 1, bh = by1 - by0 + 1;
  const long long budget = 16LL * plan.tile_size * plan.tile_size;
  if (bw * bh > budget && (w > 1 || h > 1)) {
    const int w0 = std::max(1, w / 2), h0 = std::max(1, h / 2);
    for (int r = 0; r < h; r += h0) {
      for (int c = 0; c < w; c += w0) {
        const int cw = std::min(w0, w - c), rh = std::min(h0, h - r);
        Raster part = warp_region(plan, x + c, y + r, cw, rh, cache, stats);
        out.blit(part, 0, 0, cw, rh, c, r);
      }
    }
    return out;
  }

  const Raster win = read_region(src, 0, bx0, by0, static_cast<int>(bw), static_cast<int>(bh), plan.fill, cache, stats);
  const std::size_t stride = static_cast<std::size_t>(bw) * ch;
  for (int r = 0; r < h; ++r) {
    std::uint8_t* dst = out.row(r);
    for (int c = 0; c < w; ++c, dst += ch) {
      const double* p = pos.data() + (static_cast<std::size_t>(r) * w + c) * 2;
      const double px = p[0], py = p[1];
      if (detail::fully_outside(px, py, sw, sh, plan.interpolation)) continue;
      if (plan.interpolation == Interpolation::nearest) {
        const auto ix = static_cast<long long>(std::floor(px + 0.5)) - bx0;
        const auto iy = static_cast<long long>(std::floor(py + 0.5)) - by0;
        const std::uint8_t* s = win.data() + static_cast<std::size_t>(iy) * stride + static_cast<std::size_t>(ix) * ch;
        for (int k = 0; k < ch; ++k) dst[k] = s[k];
        continue;
      }
      const double fx = std::floor(px), fy = std::floor(py);
      const double tx = px - fx, ty = py - fy;
      const auto ix = static_cast<long long>(fx) - bx0, iy = static_cast<long long>(fy) - by0;
      const std::uint8_t* s00 = win.data() + static_cast<std::size_t>(iy) * stride + static_cast<std::size_t>(ix) * ch;
      const std::uint8_t* s10 = s00 + ch;
      const std::uint8_t* s01 = s00 + stride;
      const std::uint8_t* s11 = s01 + ch;
      for (int k = 0; k < ch; ++k) {
        const double top = s00[k] + tx * (s10[k] - s00[k]);
        const double bot = s01[k] + tx * (s11[k] - s01[k]);
        dst[k] = to_u8(top + ty * (bot - top));
      }
    }
  }
  return out;
}

struct WarpStats {
  std::size_t tiles = 0;  ///< level-0 output tiles
  std::uint64_t bytes_written = 0;
  std::size_t max_fan_in = 0;  ///< most source tiles touched by one output tile
  std::size_t source_tiles_read = 0;
};

/// Warps the whole output tile by tile, streaming into a pyramidal TIFF.
inline WarpStats warp_image_tiled(const WarpPlan& plan, const std::string& path, int num_levels = 0) {
  plan.validate();
  if (num_levels <= 0) num_levels = auto_num_levels(plan.width, plan.height);
  PyramidTiffWriter writer(path, plan.width, plan.height, plan.source->channels(), plan.tile_size, num_levels);
  TileCache cache(8);
  WarpStats stats;
  while (!writer.complete()) {
    const Rect r = writer.next_tile_rect();
    RegionStats rs;
    writer.push(warp_region(plan, r.x, r.y, static_cast<int>(r.w), static_cast<int>(r.h), &cache, &rs));
    stats.max_fan_in = std::max(stats.max_fan_in, rs.tiles_read);
    stats.source_tiles_read += rs.tiles_read;
  }
  const WriteStats ws = writer.finish();
  stats.tiles = static_cast<std::size_t>(writer.tiles_across() * writer.tiles_down());
  stats.bytes_written = ws.bytes_written;
  return stats;
}

/// Low-resolution preview: warps `moving`, a raster whose pixel i sits at
/// level-0 coordinate scale * i, through the total field onto an output of
/// the given size in the same raster convention. Bilinear, fill outside.
inline Raster warp_preview(const DisplacementField& field, const Raster& moving, double scale, int width, int height,
                           std::uint8_t fill) {
  Raster out(width, height, moving.channels(), fill);
  const int ch = moving.channels();
  const int mw = moving.width(), mh = moving.height();
  for (int r = 0; r < height; ++r) {
    std::uint8_t* dst = out.row(r);
    for (int c = 0; c < width; ++c, dst += ch) {
      const double qx = scale * c, qy = scale * r;
      const Point d = sample_displacement(field, qx, qy);
      const double px = (qx + d.x) / scale, py = (qy + d.y) / scale;
      if (detail::fully_outside(px, py, mw, mh, Interpolation::bilinear)) continue;
      const double fx = std::floor(px), fy = std::floor(py);
      const double tx = px - fx, ty = py - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      auto val = [&](int xx, int yy, int k) -> double {
        return (xx < 0 || yy < 0 || xx >= mw || yy >= mh) ? fill : moving.at(xx, yy, k);
      };
      for (int k = 0; k < ch; ++k) {
        const double top = val(x0, y0, k) + tx * (val(x0 + 1, y0, k) - val(x0, y0, k));
        const double bot = val(x0, y0 + 1, k) + tx * (val(x0 + 1, y0 + 1, k) - val(x0, y0 + 1, k));
        dst[k] = to_u8(top + ty * (bot - top));
      }
    }
  }
  return out;
}

}  // namespace wsireg
