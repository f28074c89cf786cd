#pragma once

/// @file field.hpp
/// Dense displacement field on a regular grid over the fixed image's level-0
/// domain. Values are level-0 pixel offsets and the field is a backward map:
/// the source of fixed point x is x + u(x).
///
/// Grid node (i, j) sits at level-0 position (s_x * i, s_y * j), the same
/// origin-anchored convention the resampler uses, so a field computed on a
/// downsampled raster maps onto level 0 without offsets. s_x and s_y agree
/// up to rounding the level-0 extent onto whole grid nodes.
///
/// DHDF file layout (little-endian):
///   "DHDF" | u32 version=1 | u64 level0_width | u64 level0_height |
///   u32 grid_width | u32 grid_height | grid_height*grid_width*(f32 dx, f32 dy)

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <utility>
#include <string>
#include <vector>

#include "wsireg/affine.hpp"
#include "wsireg/error.hpp"

namespace wsireg {

class DisplacementField {
 public:
  DisplacementField() = default;

  /// Zero field.
  DisplacementField(int grid_width, int grid_height, long long level0_width, long long level0_height)
      : gw_(grid_width), gh_(grid_height), l0w_(level0_width), l0h_(level0_height) {
    if (gw_ < 2 || gh_ < 2) throw_argument("displacement grid must be at least 2x2");
    if (l0w_ < gw_ || l0h_ < gh_) throw_argument("level-0 domain must be at least as large as the grid");
    sx_ = static_cast<double>(l0w_) / gw_;
    sy_ = static_cast<double>(l0h_) / gh_;
    if (std::abs(sx_ - sy_) > 1e-3 * std::max(sx_, sy_) && !rounding_compatible(gw_, gh_, l0w_, l0h_)) {
      throw_argument("displacement grid scale is not uniform: " + std::to_string(sx_) + " vs " + std::to_string(sy_));
    }
    u_.assign(static_cast<std::size_t>(gw_) * gh_ * 2, 0.0);
  }

  /// True if some scale s rounds both extents onto the grid, i.e.
  /// round(l0w / s) == gw and round(l0h / s) == gh.
  static bool rounding_compatible(int gw, int gh, long long l0w, long long l0h) {
    const double inf = std::numeric_limits<double>::infinity();
    const double lo = std::max(l0w / (gw + 0.5), l0h / (gh + 0.5));
    const double hi = std::min(gw > 0.5 ? l0w / (gw - 0.5) : inf, gh > 0.5 ? l0h / (gh - 0.5) : inf);
    return lo <= hi;
  }

  static DisplacementField constant(int gw, int gh, long long l0w, long long l0h, Point v) {
    DisplacementField f(gw, gh, l0w, l0h);
    for (std::size_t i = 0; i < f.u_.size(); i += 2) {
      f.u_[i] = v.x;
      f.u_[i + 1] = v.y;
    }
    return f;
  }

  int grid_width() const noexcept { return gw_; }
  int grid_height() const noexcept { return gh_; }
  long long level0_width() const noexcept { return l0w_; }
  long long level0_height() const noexcept { return l0h_; }
  double scale_x() const noexcept { return sx_; }
  double scale_y() const noexcept { return sy_; }
  /// Level-0 pixels per grid pixel.
  double scale() const noexcept { return sx_; }
  bool empty() const noexcept { return u_.empty(); }

  std::vector<double>& raw() noexcept { return u_; }
  const std::vector<double>& raw() const noexcept { return u_; }

  Point at(int i, int j) const noexcept {
    const std::size_t k = (static_cast<std::size_t>(j) * gw_ + i) * 2;
    return {u_[k], u_[k + 1]};
  }
  void set(int i, int j, Point v) noexcept {
    const std::size_t k = (static_cast<std::size_t>(j) * gw_ + i) * 2;
    u_[k] = v.x;
    u_[k + 1] = v.y;
  }

  /// Level-0 position of grid node (i, j).
  Point node(int i, int j) const noexcept { return {sx_ * i, sy_ * j}; }

  bool all_finite() const noexcept {
    return std::all_of(u_.begin(), u_.end(), [](double v) { return std::isfinite(v); });
  }

  double max_magnitude() const noexcept {
    double m = 0;
    for (std::size_t i = 0; i < u_.size(); i += 2) m = std::max(m, std::hypot(u_[i], u_[i + 1]));
    return m;
  }

  /// Copy with every component rounded through float32, i.e. what a DHDF
  /// round trip yields.
  DisplacementField quantized() const {
    DisplacementField f = *this;
    for (double& v : f.u_) v = static_cast<double>(static_cast<float>(v));
    return f;
  }

  bool same_grid(const DisplacementField& o) const noexcept {
    return gw_ == o.gw_ && gh_ == o.gh_ && l0w_ == o.l0w_ && l0h_ == o.l0h_;
  }
  bool operator==(const DisplacementField& o) const noexcept { return same_grid(o) && u_ == o.u_; }

 private:
  int gw_ = 0, gh_ = 0;
  long long l0w_ = 0, l0h_ = 0;
  double sx_ = 1, sy_ = 1;
  std::vector<double> u_;
};

/// Grid dims covering a level-0 extent at `scale` level-0 pixels per node.
inline std::pair<int, int> fitted_grid(long long l0w, long long l0h, double scale) {
  const int gw = static_cast<int>(std::max<long long>(2, std::llround(static_cast<double>(l0w) / scale)));
  const int gh = static_cast<int>(std::max<long long>(2, std::llround(static_cast<double>(l0h) / scale)));
  return {gw, gh};
}

/// Bilinear displacement at level-0 position (x, y), clamped to the grid.
inline Point sample_displacement(const DisplacementField& f, double x, double y) {
  const double gx = std::clamp(x / f.scale_x(), 0.0, f.grid_width() - 1.0);
  const double gy = std::clamp(y / f.scale_y(), 0.0, f.grid_height() - 1.0);
  const int i0 = std::min(static_cast<int>(gx), f.grid_width() - 2);
  const int j0 = std::min(static_cast<int>(gy), f.grid_height() - 2);
  const double tx = gx - i0, ty = gy - j0;
  const std::size_t w = static_cast<std::size_t>(f.grid_width());
  const double* p = f.raw().data() + (static_cast<std::size_t>(j0) * w + i0) * 2;
  const double* q = p + w * 2;
  const double top_x = p[0] + tx * (p[2] - p[0]), top_y = p[1] + tx * (p[3] - p[1]);
  const double bot_x = q[0] + tx * (q[2] - q[0]), bot_y = q[1] + tx * (q[3] - q[1]);
  return {top_x + ty * (bot_x - top_x), top_y + ty * (bot_y - top_y)};
}

/// Whole field as an affine map expressed on the given grid.
inline DisplacementField affine_as_field(const AffineTransform& a, int gw, int gh, long long l0w, long long l0h) {
  DisplacementField f(gw, gh, l0w, l0h);
  for (int j = 0; j < gh; ++j) {
    for (int i = 0; i < gw; ++i) {
      const Point p = f.node(i, j);
      f.set(i, j, a.apply(p) - p);
    }
  }
  return f;
}

namespace detail {
static_assert(std::endian::native == std::endian::little, "DHDF IO assumes a little-endian host");

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::ifstream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw_io("truncated displacement field file '" + path + "'");
  return v;
}
}  // namespace detail

inline constexpr char kDhdfMagic[4] = {'D', 'H', 'D', 'F'};
inline constexpr std::uint32_t kDhdfVersion = 1;

inline void write_dhdf(const std::string& path, const DisplacementField& f) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw_io("cannot write displacement field '" + path + "'");
  os.write(kDhdfMagic, 4);
  detail::put<std::uint32_t>(os, kDhdfVersion);
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(f.level0_width()));
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(f.level0_height()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.grid_width()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.grid_height()));
  std::vector<float> buf(f.raw().size());
  std::transform(f.raw().begin(), f.raw().end(), buf.begin(), [](double v) { return static_cast<float>(v); });
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw_io("write failed on displacement field '" + path + "'");
}

inline DisplacementField read_dhdf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_io("cannot open displacement field '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kDhdfMagic, 4) != 0) throw_io("'" + path + "' is not a DHDF file");
  const auto version = detail::get<std::uint32_t>(is, path);
  if (version != kDhdfVersion) throw_io("unsupported DHDF version " + std::to_string(version) + " in '" + path + "'");
  const auto l0w = detail::get<std::uint64_t>(is, path);
  const auto l0h = detail::get<std::uint64_t>(is, path);
  const auto gw = detail::get<std::uint32_t>(is, path);
  const auto gh = detail::get<std::uint32_t>(is, path);
  if (gw > (1u << 20) || gh > (1u << 20)) throw_io("implausible DHDF grid size in '" + path + "'");
  DisplacementField f;
  try {
    f = DisplacementField(static_cast<int>(gw), static_cast<int>(gh), static_cast<long long>(l0w),
                          static_cast<long long>(l0h));
  } catch (const Error& e) {
    throw_io("invalid DHDF header in '" + path + "': " + e.what());
  }
  std::vector<float> buf(f.raw().size());
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw_io("truncated displacement field file '" + path + "'");
  }
  std::transform(buf.begin(), buf.end(), f.raw().begin(), [](float v) { return static_cast<double>(v); });
  if (!f.all_finite()) throw_io("displacement field '" + path + "' contains non-finite values");
  return f;
}

}  // namespace wsireg
