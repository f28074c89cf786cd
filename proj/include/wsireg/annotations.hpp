#pragma once

/// @file annotations.hpp
/// Landmark and mask transfer through a total displacement field, and
/// relative target registration error (distance over the image diagonal).
///
/// Landmark CSV: header `x,y`, one point per line, level-0 pixel coordinates
/// with x to the right and y down. Written files gain a `converged` column
/// when some point could not be mapped.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wsireg/field.hpp"
#include "wsireg/warping.hpp"

namespace wsireg {

enum class Frame { fixed, moving };

struct LandmarkSet {
  std::vector<Point> points;
  Frame frame = Frame::fixed;
  std::vector<bool> converged;  ///< empty, or one flag per point

  std::size_t size() const noexcept { return points.size(); }
  bool all_converged() const {
    return std::all_of(converged.begin(), converged.end(), [](bool b) { return b; });
  }
};

enum class Direction { fixed_to_moving, moving_to_fixed };

inline Direction parse_direction(const std::string& s) {
  if (s == "fixed-to-moving") return Direction::fixed_to_moving;
  if (s == "moving-to-fixed") return Direction::moving_to_fixed;
  throw_argument("unknown direction '" + s + "' (expected fixed-to-moving or moving-to-fixed)");
}

struct PointInversionOptions {
  double tol = 0.05;
  int max_iters = 50;
};

namespace detail {

/// Solves x + v(x) = p by Newton steps with a finite-difference Jacobian of
/// the bilinear field. On an affine-dominated total field this converges in a
/// couple of steps where the plain iteration x <- p - v(x) would not.
inline bool invert_point(const DisplacementField& f, Point p, Point& x, const PointInversionOptions& opt) {
  const double h = 0.5 * f.scale();
  x = p;
  for (int it = 0; it < opt.max_iters; ++it) {
    const Point r = x + sample_displacement(f, x.x, x.y) - p;
    const Point dxp = sample_displacement(f, x.x + h, x.y), dxm = sample_displacement(f, x.x - h, x.y);
    const Point dyp = sample_displacement(f, x.x, x.y + h), dym = sample_displacement(f, x.x, x.y - h);
    const double a = 1 + (dxp.x - dxm.x) / (2 * h), b = (dyp.x - dym.x) / (2 * h);
    const double c = (dxp.y - dxm.y) / (2 * h), d = 1 + (dyp.y - dym.y) / (2 * h);
    const double det = a * d - b * c;
    Point step;
    if (std::abs(det) > 1e-12 && std::isfinite(det)) {
      step = {(d * r.x - b * r.y) / det, (-c * r.x + a * r.y) / det};
    } else {
      step = r;
    }
    x = x - step;
    if (!(std::isfinite(x.x) && std::isfinite(x.y))) return false;
    if (norm(step) < opt.tol) return true;
  }
  return false;
}

}  // namespace detail

/// Maps points through the total backward field. fixed_to_moving evaluates
/// p + v(p); moving_to_fixed inverts that map per point. Order and count are
/// preserved; points that fail to converge are flagged and kept.
inline LandmarkSet transform_points(const LandmarkSet& pts, const DisplacementField& field, Direction dir,
                                    const PointInversionOptions& opt = {}) {
  const Frame expected = dir == Direction::fixed_to_moving ? Frame::fixed : Frame::moving;
  if (pts.frame != expected) throw_argument("transform_points: landmark frame does not match the direction");
  LandmarkSet out;
  out.frame = dir == Direction::fixed_to_moving ? Frame::moving : Frame::fixed;
  out.points.reserve(pts.size());
  out.converged.reserve(pts.size());
  for (const Point& p : pts.points) {
    if (dir == Direction::fixed_to_moving) {
      out.points.push_back(p + sample_displacement(field, p.x, p.y));
      out.converged.push_back(true);
    } else {
      Point x;
      out.converged.push_back(detail::invert_point(field, p, x, opt));
      out.points.push_back(x);
    }
  }
  return out;
}

/// Nearest-neighbour tiled warp of a label mask with fill 0.
inline WarpStats warp_mask(const PyramidImage& mask, const DisplacementField& field, long long out_width,
                           long long out_height, const std::string& path, int tile_size = kDefaultTileSize) {
  if (mask.channels() != 1) throw_argument("warp_mask expects a single-channel mask");
  WarpPlan plan{&field, &mask, out_width, out_height, tile_size, Interpolation::nearest, 0};
  return warp_image_tiled(plan, path);
}

struct RtreSummary {
  std::vector<double> values;
  double median = 0;
  double mean = 0;
  double max = 0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline RtreSummary compute_rtre(const LandmarkSet& warped, const LandmarkSet& target, double diag) {
  if (warped.size() != target.size()) {
    throw_argument("rTRE: point counts differ (" + std::to_string(warped.size()) + " vs " +
                   std::to_string(target.size()) + ")");
  }
  if (!(diag > 0)) throw_argument("rTRE: diagonal must be positive");
  RtreSummary s;
  s.values.reserve(warped.size());
  for (std::size_t i = 0; i < warped.size(); ++i) s.values.push_back(norm(warped.points[i] - target.points[i]) / diag);
  if (s.values.empty()) return s;
  s.median = median_of(s.values);
  double sum = 0;
  for (double v : s.values) {
    sum += v;
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(s.values.size());
  return s;
}

inline LandmarkSet read_landmarks(const std::string& path, Frame frame) {
  std::ifstream is(path);
  if (!is) throw_io("cannot open landmark file '" + path + "'");
  std::string line;
  auto chomp = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  };
  if (!std::getline(is, line)) throw_io("landmark file '" + path + "' is empty");
  chomp(line);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (line != "x,y" && line != "x,y,converged") throw_io("landmark file '" + path + "' must start with the header x,y");
  LandmarkSet set;
  set.frame = frame;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    chomp(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string xs, ys;
    if (!std::getline(ls, xs, ',') || !std::getline(ls, ys, ',')) {
      throw_io("landmark file '" + path + "' line " + std::to_string(lineno) + ": expected x,y");
    }
    try {
      std::size_t px = 0, py = 0;
      const double x = std::stod(xs, &px), y = std::stod(ys, &py);
      if (px != xs.size() || py != ys.size() || !std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("");
      set.points.push_back({x, y});
    } catch (const std::logic_error&) {
      throw_io("landmark file '" + path + "' line " + std::to_string(lineno) + ": bad coordinate");
    }
  }
  return set;
}

inline void write_landmarks(const std::string& path, const LandmarkSet& set) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("cannot write landmark file '" + path + "'");
  const bool flags = !set.converged.empty() && !set.all_converged();
  os << (flags ? "x,y,converged\n" : "x,y\n");
  os.precision(17);
  for (std::size_t i = 0; i < set.size(); ++i) {
    os << set.points[i].x << ',' << set.points[i].y;
    if (flags) os << ',' << (set.converged[i] ? 1 : 0);
    os << '\n';
  }
  if (!os) throw_io("write failed on landmark file '" + path + "'");
}

}  // namespace wsireg
