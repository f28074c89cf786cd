#pragma once

/// @file synthetic.hpp
/// Seeded synthetic slide pairs with exact ground truth.
///
/// The fixed image is a procedural H&E-like texture (tissue blobs, fibrous
/// value noise, nuclei) on white glass, defined at every real coordinate so
/// it can be sampled anywhere. The ground-truth backward map is
/// m(x) = A (x + d(x)) with A a random affine about the image center and d a
/// smooth random field. moving(m(x)) = fixed(x), so moving pixel y shows
/// the fixed texture at m^-1(y), found per pixel by fixed-point iteration.
/// Images are produced tile by tile so large sizes can be streamed to disk.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "wsireg/affine.hpp"
#include "wsireg/annotations.hpp"
#include "wsireg/field.hpp"
#include "wsireg/nonrigid.hpp"
#include "wsireg/pyramid_io.hpp"
#include "wsireg/raster.hpp"

namespace wsireg {

struct SyntheticOptions {
  std::uint64_t seed = 0;
  int size = 2048;
  double max_rotation_deg = 180;  ///< rotation uniform in [-max, max]
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_shear = 0.1;
  double max_translation = 0.1;  ///< fraction of the side
  double max_deform = 0;         ///< level-0 px
  double smoothness_sigma = 4;   ///< deformation smoothing, deformation-grid px
  int deform_grid = 64;          ///< deformation grid nodes per side
  int landmark_grid = 10;
  bool alternate_stain = false;  ///< moving rendered with a hematoxylin/DAB palette

  static SyntheticOptions identity(std::uint64_t seed, int size) {
    SyntheticOptions o;
    o.seed = seed;
    o.size = size;
    o.max_rotation_deg = 0;
    o.min_scale = o.max_scale = 1;
    o.max_shear = 0;
    o.max_translation = 0;
    return o;
  }

  void validate() const {
    if (size < 256) throw_argument("synthetic size must be >= 256");
    if (!(max_rotation_deg >= 0 && max_rotation_deg <= 180)) throw_argument("rotation range must lie in [0, 180]");
    if (!(min_scale > 0 && min_scale <= max_scale)) throw_argument("scale range must satisfy 0 < min <= max");
    if (!(max_shear >= 0 && max_shear < 1)) throw_argument("shear range must lie in [0, 1)");
    if (!(max_translation >= 0 && max_translation <= 0.5)) throw_argument("translation range must lie in [0, 0.5]");
    if (!(max_deform >= 0 && std::isfinite(max_deform))) throw_argument("max_deform must be >= 0");
    if (!(smoothness_sigma >= 0)) throw_argument("smoothness sigma must be >= 0");
    if (deform_grid < 2 || landmark_grid < 1) throw_argument("grid sizes too small");
  }
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Uniform in [0, 1) from a hash of (seed, i, j, salt).
inline std::uint64_t hash3(std::uint64_t seed, long long i, long long j, std::uint64_t salt) {
  return splitmix(seed * 0xD6E8FEB86659FD93ull ^ salt * 0xA0761D6478BD642Full ^
                  static_cast<std::uint64_t>(i) * 0xE7037ED1A0B428DBull ^ static_cast<std::uint64_t>(j) * 0x8EBC6AF09C88C6E3ull);
}

inline double hash01(std::uint64_t seed, long long i, long long j, std::uint64_t salt) {
  return static_cast<double>(hash3(seed, i, j, salt) >> 11) * 0x1.0p-53;
}

/// Portable uniform draws; std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = 1.0 - uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * M_PI * u2);
  }

 private:
  std::mt19937_64 g_;
};

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

}  // namespace detail

/// The procedural texture and the ground-truth transform of one seed.
class SyntheticScene {
 public:
  explicit SyntheticScene(const SyntheticOptions& opt) : opt_(opt) {
    opt_.validate();
    detail::Rng rng(opt_.seed);
    const double n = opt_.size;
    unit_ = n / 2048.0;
    const Point c{(n - 1) / 2.0, (n - 1) / 2.0};

    const int blobs = 6 + static_cast<int>(rng.uniform() * 5);
    for (int i = 0; i < blobs; ++i) {
      const double r = 0.2 * n * std::sqrt(rng.uniform());
      const double a = rng.uniform(0, 2 * M_PI);
      const double sigma = rng.uniform(0.11, 0.17) * n, elong = std::sqrt(rng.uniform(1.0, 3.0));
      const double phi = rng.uniform(0, M_PI);
      blobs_.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a), sigma * elong, sigma / elong, std::cos(phi),
                        std::sin(phi), rng.uniform(0.7, 1.0)});
    }

    const double theta = rng.uniform(-opt_.max_rotation_deg, opt_.max_rotation_deg);
    const double scale = rng.uniform(opt_.min_scale, opt_.max_scale);
    const double shear = rng.uniform(-opt_.max_shear, opt_.max_shear);
    const double tx = rng.uniform(-opt_.max_translation, opt_.max_translation) * n;
    const double ty = rng.uniform(-opt_.max_translation, opt_.max_translation) * n;
    const AffineTransform linear = AffineTransform::rotation(theta) * AffineTransform(scale, scale * shear, 0, 0, scale, 0);
    affine_ = AffineTransform::translation(c.x + tx, c.y + ty) * linear * AffineTransform::translation(-c.x, -c.y);
    if (theta == 0 && scale == 1 && shear == 0 && tx == 0 && ty == 0) affine_ = AffineTransform();
    inverse_ = affine_.inverse();

    // The grid extends past the image so rotated-in content is defined too.
    density_step_ = 2.0 * n / (kDensityGrid - 1);
    density_.resize(static_cast<std::size_t>(kDensityGrid) * kDensityGrid);
    for (int j = 0; j < kDensityGrid; ++j) {
      for (int i = 0; i < kDensityGrid; ++i) {
        const double x = i * density_step_ - 0.5 * n, y = j * density_step_ - 0.5 * n;
        double d = 0;
        for (const Blob& b : blobs_) {
          const double u = ((x - b.x) * b.cos + (y - b.y) * b.sin) / b.major;
          const double v = (-(x - b.x) * b.sin + (y - b.y) * b.cos) / b.minor;
          d += b.weight * std::exp(-0.5 * (u * u + v * v));
        }
        density_[static_cast<std::size_t>(j) * kDensityGrid + i] = d * (0.75 + 0.5 * noise(x, y, 0.08 * n, 0x11));
      }
    }

    const int g = opt_.deform_grid;
    deform_ = DisplacementField(g, g, opt_.size, opt_.size);
    if (opt_.max_deform > 0) {
      for (double& v : deform_.raw()) v = rng.normal();
      gaussian_smooth_field(deform_, opt_.smoothness_sigma);
      const double m = deform_.max_magnitude();
      if (m > 0) {
        for (double& v : deform_.raw()) v *= opt_.max_deform / m;
      }
    }
  }

  const SyntheticOptions& options() const noexcept { return opt_; }
  const AffineTransform& affine() const noexcept { return affine_; }
  const DisplacementField& deformation() const noexcept { return deform_; }

  /// Ground-truth total backward field v(x) = A (x + d(x)) - x. Bilinear
  /// interpolation reproduces it exactly between nodes.
  DisplacementField ground_truth() const {
    DisplacementField v(deform_.grid_width(), deform_.grid_height(), deform_.level0_width(), deform_.level0_height());
    for (int j = 0; j < v.grid_height(); ++j) {
      for (int i = 0; i < v.grid_width(); ++i) {
        const Point p = v.node(i, j);
        v.set(i, j, affine_.apply(p + deform_.at(i, j)) - p);
      }
    }
    return v;
  }

  Point map_fixed_to_moving(Point p) const { return affine_.apply(p + sample_displacement(deform_, p.x, p.y)); }

  /// m^-1(y): solves x + d(x) = A^-1 y.
  Point map_moving_to_fixed(Point y) const {
    const Point z = inverse_.apply(y);
    if (opt_.max_deform == 0) return z;
    Point x = z;
    for (int it = 0; it < 40; ++it) {
      const Point next = z - sample_displacement(deform_, x.x, x.y);
      const double moved = norm(next - x);
      x = next;
      if (moved < 1e-7) break;
    }
    return x;
  }

  /// Tissue weight in [0, 1] of the fixed texture at a real position.
  /// Tissue coverage in [0, 1]: lobes minus gland-like lumens.
  double tissue(double x, double y) const {
    const double t = detail::smoothstep(0.3, 0.5, density_at(x, y));
    if (t == 0) return 0;
    return t * (1 - detail::smoothstep(0.7, 0.78, noise(x, y, 0.05 * opt_.size, 0x31)));
  }

  /// RGB of the fixed texture at a real position.
  void fixed_color(double x, double y, std::uint8_t out[3]) const { shade(x, y, false, out); }

  Raster fixed_tile(const Rect& r) const { return render(r, false); }
  Raster moving_tile(const Rect& r) const { return render(r, true); }

  TileSource fixed_source() const {
    return {opt_.size, opt_.size, 3, [this](const Rect& r) { return fixed_tile(r); }};
  }
  TileSource moving_source() const {
    return {opt_.size, opt_.size, 3, [this](const Rect& r) { return moving_tile(r); }};
  }

  /// Regular grid over the central 60% of the fixed image, where the tissue is.
  LandmarkSet fixed_landmarks() const {
    LandmarkSet s;
    s.frame = Frame::fixed;
    const int k = opt_.landmark_grid;
    const double n = opt_.size - 1.0;
    for (int j = 0; j < k; ++j) {
      for (int i = 0; i < k; ++i) {
        const double fx = k == 1 ? 0.5 : 0.2 + 0.6 * i / (k - 1);
        const double fy = k == 1 ? 0.5 : 0.2 + 0.6 * j / (k - 1);
        s.points.push_back({fx * n, fy * n});
      }
    }
    return s;
  }

  LandmarkSet moving_landmarks() const {
    LandmarkSet s = fixed_landmarks();
    s.frame = Frame::moving;
    for (Point& p : s.points) p = map_fixed_to_moving(p);
    return s;
  }

 private:
  /// Elongated Gaussian lobe of tissue.
  struct Blob {
    double x, y, major, minor, cos, sin, weight;
  };

  /// Value noise with smoothstep interpolation on a lattice of period `p`.
  double noise(double x, double y, double p, std::uint64_t salt) const {
    const double gx = x / p, gy = y / p;
    const double fx = std::floor(gx), fy = std::floor(gy);
    const auto i = static_cast<long long>(fx), j = static_cast<long long>(fy);
    const double tx = detail::smoothstep(0, 1, gx - fx), ty = detail::smoothstep(0, 1, gy - fy);
    const double a = detail::hash01(opt_.seed, i, j, salt), b = detail::hash01(opt_.seed, i + 1, j, salt);
    const double c = detail::hash01(opt_.seed, i, j + 1, salt), d = detail::hash01(opt_.seed, i + 1, j + 1, salt);
    const double top = a + tx * (b - a), bot = c + tx * (d - c);
    return top + ty * (bot - top);
  }

  /// Nuclei: one jittered Gaussian spot per lattice cell, parameters taken
  /// from 16-bit slices of a single cell hash.
  double nuclei(double x, double y) const {
    const double cell = 14 * unit_;
    const double gx = x / cell, gy = y / cell;
    const auto ci = static_cast<long long>(std::floor(gx)), cj = static_cast<long long>(std::floor(gy));
    double best = std::numeric_limits<double>::infinity();
    for (long long j = cj - 1; j <= cj + 1; ++j) {
      for (long long i = ci - 1; i <= ci + 1; ++i) {
        const std::uint64_t h = detail::hash3(opt_.seed, i, j, 0x51);
        auto part = [h](int k) { return static_cast<double>((h >> (16 * k)) & 0xFFFF) / 65536.0; };
        if (part(0) < 0.35) continue;
        const double nx = (i + 0.15 + 0.7 * part(1)) * cell;
        const double ny = (j + 0.15 + 0.7 * part(2)) * cell;
        const double rho = (2.2 + 1.8 * part(3)) * unit_;
        const double d2 = (x - nx) * (x - nx) + (y - ny) * (y - ny);
        best = std::min(best, d2 / (2 * rho * rho));
      }
    }
    return best > 12 ? 0.0 : std::exp(-best);
  }

  /// Tissue density, precomputed on a coarse grid and interpolated.
  double density_at(double x, double y) const {
    const double half = 0.5 * opt_.size;
    const double gx = std::clamp((x + half) / density_step_, 0.0, kDensityGrid - 1.0);
    const double gy = std::clamp((y + half) / density_step_, 0.0, kDensityGrid - 1.0);
    const int i = std::min(static_cast<int>(gx), kDensityGrid - 2), j = std::min(static_cast<int>(gy), kDensityGrid - 2);
    const double tx = gx - i, ty = gy - j;
    const double* p = density_.data() + static_cast<std::size_t>(j) * kDensityGrid + i;
    const double top = p[0] + tx * (p[1] - p[0]);
    const double bot = p[kDensityGrid] + tx * (p[kDensityGrid + 1] - p[kDensityGrid]);
    return top + ty * (bot - top);
  }

  void shade(double x, double y, bool alternate, std::uint8_t out[3]) const {
    const double tissue = this->tissue(x, y);
    double od[3] = {0.02, 0.02, 0.02};
    if (tissue > 0) {
      const double fiber = 0.6 * noise(x, y, 40 * unit_, 0x21) + 0.4 * noise(x, y, 9 * unit_, 0x22);
      const double nuc = nuclei(x, y);
      // Regions of denser and paler stroma, and of more and fewer nuclei.
      const double region = 0.35 + 1.1 * noise(x, y, 0.12 * opt_.size, 0x23);
      const double cellular = 0.6 + 0.8 * noise(x, y, 0.09 * opt_.size, 0x24);
      const double h = tissue * (0.08 + 1.1 * nuc * cellular);
      const double e = tissue * region * (0.15 + 0.55 * fiber);
      static constexpr double kH[3] = {0.65, 0.70, 0.29};
      static constexpr double kE[3] = {0.07, 0.99, 0.11};
      static constexpr double kDab[3] = {0.27, 0.57, 0.78};
      for (int c = 0; c < 3; ++c) {
        od[c] += alternate ? h * kH[c] + 0.9 * e * e * kDab[c] / 0.7 : h * kH[c] + e * kE[c];
      }
    }
    for (int c = 0; c < 3; ++c) out[c] = to_u8(255.0 * std::exp(-od[c]));
  }

  Raster render(const Rect& r, bool moving) const {
    Raster out(static_cast<int>(r.w), static_cast<int>(r.h), 3);
    for (long long j = 0; j < r.h; ++j) {
      std::uint8_t* row = out.row(static_cast<int>(j));
      for (long long i = 0; i < r.w; ++i) {
        const Point q{static_cast<double>(r.x + i), static_cast<double>(r.y + j)};
        const Point p = moving ? map_moving_to_fixed(q) : q;
        shade(p.x, p.y, moving && opt_.alternate_stain, row + i * 3);
      }
    }
    return out;
  }

  static constexpr int kDensityGrid = 513;

  SyntheticOptions opt_;
  double unit_ = 1;
  double density_step_ = 1;
  std::vector<double> density_;
  std::vector<Blob> blobs_;
  AffineTransform affine_;
  AffineTransform inverse_;
  DisplacementField deform_;
};

struct SyntheticPair {
  Raster fixed;
  Raster moving;
  DisplacementField ground_truth;  ///< total backward field, fixed -> moving
  AffineTransform affine;
  LandmarkSet fixed_landmarks;
  LandmarkSet moving_landmarks;
};

inline SyntheticPair generate_synthetic_pair(const SyntheticOptions& opt) {
  const SyntheticScene scene(opt);
  const Rect all{0, 0, opt.size, opt.size};
  return {scene.fixed_tile(all), scene.moving_tile(all), scene.ground_truth(), scene.affine(), scene.fixed_landmarks(),
          scene.moving_landmarks()};
}

}  // namespace wsireg
