#pragma once

/// @file initial_alignment.hpp
/// Orientation-free linear alignment: tissue centroids seed a translation, an
/// exhaustive rotation sweep scored by NCC picks the orientation, and a
/// finite-difference gradient descent refines all six affine parameters.
///
/// Transforms here are backward maps (fixed -> moving). Search and refinement
/// run on downsampled copies of the preprocessed pair; results are returned
/// in preprocessed coordinates except for run_initial, which returns level-0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wsireg/affine.hpp"
#include "wsireg/preprocessing.hpp"
#include "wsireg/similarity.hpp"

namespace wsireg {

/// Otsu threshold: the value t maximizing between-class variance of {<= t} vs {> t}.
inline int otsu_threshold(const Raster& r) {
  std::array<double, 256> hist{};
  for (std::uint8_t v : r.bytes()) hist[v] += 1;
  const double n = static_cast<double>(r.size_bytes());
  double total = 0;
  for (int v = 0; v < 256; ++v) total += v * hist[static_cast<std::size_t>(v)];
  double w0 = 0, sum0 = 0, best = -1;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = n - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (total - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

struct CentroidResult {
  Point center;
  bool fallback = false;  ///< too little foreground, image center returned
};

/// Centroid of the Otsu foreground of a tissue-bright raster.
inline CentroidResult estimate_tissue_centroid(const Raster& r) {
  if (r.channels() != 1) throw_argument("estimate_tissue_centroid expects a single-channel raster");
  const CentroidResult fallback{{(r.width() - 1) / 2.0, (r.height() - 1) / 2.0}, true};
  if (r.empty()) return fallback;
  const int t = otsu_threshold(r);
  double sx = 0, sy = 0;
  std::size_t count = 0;
  for (int y = 0; y < r.height(); ++y) {
    const std::uint8_t* row = r.row(y);
    for (int x = 0; x < r.width(); ++x) {
      if (row[x] > t) {
        sx += x;
        sy += y;
        ++count;
      }
    }
  }
  if (static_cast<double>(count) < 1e-3 * static_cast<double>(r.size_bytes())) return fallback;
  return {{sx / count, sy / count}, false};
}

/// Fixed raster plus moving raster sampled through a candidate transform.
/// Buffers are reused across evaluations.
class AffineObjective {
 public:
  AffineObjective(const Raster& fixed, const Raster& moving) : fixed_(fixed), moving_(moving) {
    const std::size_t n = static_cast<std::size_t>(fixed.width()) * fixed.height();
    warped_.resize(n);
    mask_.resize(n);
  }

  /// NCC between fixed and moving∘t over pixels whose source lies inside moving.
  double ncc(const AffineTransform& t) {
    const int w = fixed_.width(), h = fixed_.height();
    const int mw = moving_.width(), mh = moving_.height();
    const double xmax = mw - 1.0, ymax = mh - 1.0;
    std::size_t k = 0;
    for (int y = 0; y < h; ++y) {
      double sx = t.b() * y + t.tx(), sy = t.d() * y + t.ty();
      for (int x = 0; x < w; ++x, ++k, sx += t.a(), sy += t.c()) {
        if (!(sx >= 0 && sy >= 0 && sx <= xmax && sy <= ymax)) {
          mask_[k] = 0;
          continue;
        }
        const int i0 = std::min(static_cast<int>(sx), mw - 2);
        const int j0 = std::min(static_cast<int>(sy), mh - 2);
        const double fx = sx - i0, fy = sy - j0;
        const std::uint8_t* p = moving_.row(j0) + i0;
        const std::uint8_t* q = p + mw;
        const double top = p[0] + fx * (p[1] - p[0]);
        const double bot = q[0] + fx * (q[1] - q[0]);
        warped_[k] = static_cast<float>(top + fy * (bot - top));
        mask_[k] = 1;
      }
    }
    ++evaluations_;
    return wsireg::ncc<std::uint8_t, float>(fixed_.bytes(), std::span<const float>(warped_), mask_);
  }

  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  const Raster& fixed_;
  const Raster& moving_;
  std::vector<float> warped_;
  std::vector<std::uint8_t> mask_;
  std::size_t evaluations_ = 0;
};

/// The pair resampled so its long side is at most `long_side`, and the scale
/// (preprocessed pixels per working pixel) that relates the two grids.
struct WorkingPair {
  Raster fixed;
  Raster moving;
  double scale = 1;
};

inline WorkingPair working_pair(const PreprocessedPair& pair, int long_side) {
  const int current = std::max(pair.fixed.width(), pair.fixed.height());
  if (long_side <= 0 || current <= long_side) return {pair.fixed, pair.moving, 1.0};
  const double factor = static_cast<double>(long_side) / current;
  return {resample(pair.fixed, factor), resample(pair.moving, factor), 1.0 / factor};
}

struct RotationSearchOptions {
  double angle_step = 15.0;
  int search_long_side = 512;
};

struct RotationSearchResult {
  AffineTransform transform;  ///< preprocessed coordinates
  double score = 0;
  double angle = 0;           ///< degrees
  std::vector<double> angles;
  std::vector<double> scores;
  CentroidResult fixed_centroid;   ///< search coordinates
  CentroidResult moving_centroid;
};

/// Rotation about the fixed centroid, then translation onto the moving centroid.
inline AffineTransform centroid_rotation(double degrees, Point fixed_c, Point moving_c) {
  return AffineTransform::translation(moving_c.x, moving_c.y) * AffineTransform::rotation(degrees) *
         AffineTransform::translation(-fixed_c.x, -fixed_c.y);
}

/// Scores every rotation on the angle grid; the highest NCC wins, ties go to
/// the smaller angle.
inline RotationSearchResult exhaustive_rotation_search(const PreprocessedPair& pair,
                                                       const RotationSearchOptions& opt = {}) {
  if (!(opt.angle_step > 0 && opt.angle_step <= 90)) throw_argument("angle step must be in (0, 90] degrees");
  const WorkingPair wp = working_pair(pair, opt.search_long_side);
  RotationSearchResult res;
  res.fixed_centroid = estimate_tissue_centroid(wp.fixed);
  res.moving_centroid = estimate_tissue_centroid(wp.moving);
  AffineObjective objective(wp.fixed, wp.moving);
  AffineTransform best;
  double best_score = -2;
  for (int k = 0;; ++k) {
    const double theta = k * opt.angle_step;
    if (theta >= 360.0 - 1e-9) break;
    const AffineTransform t = centroid_rotation(theta, res.fixed_centroid.center, res.moving_centroid.center);
    const double s = objective.ncc(t);
    res.angles.push_back(theta);
    res.scores.push_back(s);
    if (s > best_score) {
      best_score = s;
      best = t;
      res.angle = theta;
    }
  }
  res.score = best_score;
  res.transform = best.rescaled(wp.scale);
  return res;
}

struct RefineOptions {
  int working_long_side = 1024;
  double linear_delta = 1e-3;       ///< finite-difference step for the 2x2 part
  double translation_delta = 0.5;   ///< finite-difference step for translation, working pixels
  double initial_step = 1.0;        ///< working pixels of motion at the image rim
  double max_step = 16.0;
  int max_halvings = 10;
  double relative_tolerance = 1e-5;
  int patience = 10;
};

struct RefineResult {
  AffineTransform transform;  ///< preprocessed coordinates
  double initial_ncc = 0;
  double final_ncc = 0;
  int iterations = 0;
  std::vector<double> trace;  ///< cost (-NCC) before the first and after each accepted step
};

/// Gradient descent on -NCC over the six affine parameters with central
/// finite differences and backtracking step halving.
///
/// The parameters are the 2x2 linear part and the image of the working
/// raster's center, so linear changes pivot about the center instead of the
/// corner and barely couple with translation. Linear entries are further
/// scaled by the half-diagonal so one unit of step moves the image rim by
/// about one pixel in every parameter direction.
inline RefineResult refine_affine(const PreprocessedPair& pair, const AffineTransform& init, int max_iters,
                                  const RefineOptions& opt = {}) {
  if (!init.invertible()) throw_numerical("refine_affine: initial transform is singular");
  const WorkingPair wp = working_pair(pair, opt.working_long_side);
  AffineObjective objective(wp.fixed, wp.moving);
  const double rim = 0.5 * std::hypot(wp.fixed.width(), wp.fixed.height());
  const Point center{(wp.fixed.width() - 1) / 2.0, (wp.fixed.height() - 1) / 2.0};

  // p = (a, b, cx', c, d, cy') with (cx', cy') = T(center).
  using Params = std::array<double, 6>;
  auto to_params = [&](const AffineTransform& t) {
    const Point pc = t.apply(center);
    return Params{t.a(), t.b(), pc.x, t.c(), t.d(), pc.y};
  };
  auto to_transform = [&](const Params& p) {
    return AffineTransform(p[0], p[1], p[2] - p[0] * center.x - p[1] * center.y, p[3], p[4],
                           p[5] - p[3] * center.x - p[4] * center.y);
  };

  Params cur = to_params(init.rescaled(1.0 / wp.scale));
  double cost = -objective.ncc(to_transform(cur));
  RefineResult res;
  res.initial_ncc = -cost;
  res.trace.push_back(cost);

  constexpr std::array<int, 6> kLinear = {1, 1, 0, 1, 1, 0};
  double step = opt.initial_step;
  int stalled = 0;
  for (int it = 0; it < max_iters; ++it) {
    Params grad{};
    double gnorm = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      const double h = kLinear[j] ? opt.linear_delta : opt.translation_delta;
      Params plus = cur, minus = cur;
      plus[j] += h;
      minus[j] -= h;
      const double g = (-objective.ncc(to_transform(plus)) + objective.ncc(to_transform(minus))) / (2 * h);
      grad[j] = kLinear[j] ? g / rim : g;  // gradient w.r.t. rim-normalized parameters
      gnorm += grad[j] * grad[j];
    }
    gnorm = std::sqrt(gnorm);
    if (!(gnorm > 0)) break;

    bool accepted = false;
    double trial = step;
    for (int halving = 0; halving <= opt.max_halvings; ++halving, trial *= 0.5) {
      Params cand = cur;
      for (std::size_t j = 0; j < 6; ++j) {
        const double dq = -trial * grad[j] / gnorm;
        cand[j] += kLinear[j] ? dq / rim : dq;
      }
      const AffineTransform ct = to_transform(cand);
      if (!ct.invertible()) continue;
      const double c = -objective.ncc(ct);
      if (c < cost) {
        const double rel = (cost - c) / std::max(std::abs(cost), 1e-12);
        cur = cand;
        cost = c;
        accepted = true;
        stalled = rel < opt.relative_tolerance ? stalled + 1 : 0;
        step = std::min(opt.max_step, trial * 2);
        break;
      }
    }
    if (!accepted) break;
    res.iterations = it + 1;
    res.trace.push_back(cost);
    if (stalled >= opt.patience) break;
  }
  res.final_ncc = -cost;
  res.transform = to_transform(cur).rescaled(wp.scale);
  return res;
}

struct InitialAlignmentOptions {
  RotationSearchOptions rotation;
  RefineOptions refine;
  int refine_max_iters = 100;
  double low_confidence_ncc = 0.02;
};

struct InitialAlignmentResult {
  AffineTransform transform;  ///< level-0 coordinates
  AffineTransform preprocessed;  ///< same map in preprocessed coordinates
  bool low_confidence = false;
  double rotation_score = 0;
  double rotation_angle = 0;
  double initial_ncc = 0;
  double final_ncc = 0;
  std::vector<std::vector<double>> traces;  ///< one refinement trace per working resolution
};

/// Rotation sweep, then refinement at increasing working resolutions ending at
/// opt.refine.working_long_side, then conversion to level-0 coordinates.
inline InitialAlignmentResult run_initial(const PreprocessedPair& pair, const InitialAlignmentOptions& opt = {}) {
  InitialAlignmentResult res;
  const RotationSearchResult rot = exhaustive_rotation_search(pair, opt.rotation);
  res.rotation_score = rot.score;
  res.rotation_angle = rot.angle;

  if (rot.score < opt.low_confidence_ncc) {
    const WorkingPair wp = working_pair(pair, opt.rotation.search_long_side);
    const Point d = rot.moving_centroid.center - rot.fixed_centroid.center;
    res.preprocessed = AffineTransform::translation(d.x, d.y).rescaled(wp.scale);
    res.low_confidence = true;
    res.initial_ncc = res.final_ncc = rot.score;
  } else {
    AffineTransform t = rot.transform;
    std::vector<int> sides;
    for (int s = 256; s < opt.refine.working_long_side; s *= 2) sides.push_back(s);
    sides.push_back(opt.refine.working_long_side);
    for (std::size_t i = 0; i < sides.size(); ++i) {
      RefineOptions ro = opt.refine;
      ro.working_long_side = sides[i];
      RefineResult r = refine_affine(pair, t, opt.refine_max_iters, ro);
      if (i == 0) res.initial_ncc = r.initial_ncc;
      res.final_ncc = r.final_ncc;
      t = r.transform;
      res.traces.push_back(std::move(r.trace));
    }
    res.preprocessed = t;
  }
  res.transform = res.preprocessed.rescaled(pair.scale);
  return res;
}

}  // namespace wsireg
