#pragma once

/// @file affine.hpp
/// 2-D affine transform in homogeneous form, used as a backward map:
/// moving = m * (fixed, 1). Coordinates are pixel indices (x right, y down).

#include <array>
#include <cmath>
#include <string>

#include "wsireg/error.hpp"

namespace wsireg {

struct Point {
  double x = 0;
  double y = 0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }

class AffineTransform {
 public:
  /// Identity.
  AffineTransform() = default;

  /// Row-major 2x3 top part; the last row is always (0, 0, 1).
  AffineTransform(double a, double b, double tx, double c, double d, double ty) : m_{a, b, tx, c, d, ty} {}

  static AffineTransform translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty}; }

  /// Rotation by `degrees` (clockwise on screen, since y points down) about `center`.
  static AffineTransform rotation(double degrees, Point center = {}) {
    const double r = degrees * M_PI / 180.0;
    const double c = std::cos(r), s = std::sin(r);
    return AffineTransform{c, -s, center.x - c * center.x + s * center.y, s, c, center.y - s * center.x - c * center.y};
  }

  double operator()(int row, int col) const { return row == 2 ? (col == 2 ? 1.0 : 0.0) : m_[row * 3 + col]; }
  double& at(int row, int col) { return m_.at(static_cast<std::size_t>(row * 3 + col)); }
  const std::array<double, 6>& params() const noexcept { return m_; }

  double a() const noexcept { return m_[0]; }
  double b() const noexcept { return m_[1]; }
  double tx() const noexcept { return m_[2]; }
  double c() const noexcept { return m_[3]; }
  double d() const noexcept { return m_[4]; }
  double ty() const noexcept { return m_[5]; }

  double det() const noexcept { return m_[0] * m_[4] - m_[1] * m_[3]; }
  bool invertible() const noexcept { return std::abs(det()) > 1e-8 && finite(); }
  bool finite() const noexcept {
    for (double v : m_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Point apply(Point p) const { return {m_[0] * p.x + m_[1] * p.y + m_[2], m_[3] * p.x + m_[4] * p.y + m_[5]}; }
  Point apply_linear(Point p) const { return {m_[0] * p.x + m_[1] * p.y, m_[3] * p.x + m_[4] * p.y}; }

  /// this ∘ o: first o, then this.
  AffineTransform operator*(const AffineTransform& o) const {
    return {m_[0] * o.m_[0] + m_[1] * o.m_[3], m_[0] * o.m_[1] + m_[1] * o.m_[4], m_[0] * o.m_[2] + m_[1] * o.m_[5] + m_[2],
            m_[3] * o.m_[0] + m_[4] * o.m_[3], m_[3] * o.m_[1] + m_[4] * o.m_[4], m_[3] * o.m_[2] + m_[4] * o.m_[5] + m_[5]};
  }

  AffineTransform inverse() const {
    if (!invertible()) throw_numerical("affine transform is singular (det " + std::to_string(det()) + ")");
    const double id = 1.0 / det();
    const double a = m_[4] * id, b = -m_[1] * id, c = -m_[3] * id, d = m_[0] * id;
    return {a, b, -(a * m_[2] + b * m_[5]), c, d, -(c * m_[2] + d * m_[5])};
  }

  /// Re-expresses a transform defined on a grid coarser by `s` (coarse pixel
  /// i sits at fine coordinate s * i) on the fine grid: the linear part is
  /// unchanged and the translation scales by s.
  AffineTransform rescaled(double s) const { return {m_[0], m_[1], m_[2] * s, m_[3], m_[4], m_[5] * s}; }

  bool operator==(const AffineTransform& o) const = default;

 private:
  std::array<double, 6> m_{1, 0, 0, 0, 1, 0};
};

inline std::string to_string(const AffineTransform& t) {
  const auto& p = t.params();
  return "[" + std::to_string(p[0]) + ", " + std::to_string(p[1]) + ", " + std::to_string(p[2]) + "; " +
         std::to_string(p[3]) + ", " + std::to_string(p[4]) + ", " + std::to_string(p[5]) + "]";
}

}  // namespace wsireg
