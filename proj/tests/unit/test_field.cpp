#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "test_util.hpp"
#include "wsireg/warping.hpp"

using namespace wsireg;

namespace {

/// Smooth random field: a sum of low-frequency sinusoids with a bounded slope.
DisplacementField smooth_field(int g, long long l0, double amp, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DisplacementField f(g, g, l0, l0);
  const double k1 = 2 * M_PI / l0 * (1 + 2 * u(rng)), k2 = 2 * M_PI / l0 * (1 + 2 * u(rng));
  const double p1 = 6.28 * u(rng), p2 = 6.28 * u(rng);
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      const Point p = f.node(i, j);
      f.set(i, j, {amp * std::sin(k1 * p.x + p1) * std::cos(k2 * p.y), amp * std::cos(k2 * p.x + p2) * std::sin(k1 * p.y)});
    }
  return f;
}

double max_slope(const DisplacementField& f) {
  double m = 0;
  for (int j = 0; j + 1 < f.grid_height(); ++j)
    for (int i = 0; i + 1 < f.grid_width(); ++i) {
      m = std::max(m, norm(f.at(i + 1, j) - f.at(i, j)) / f.scale());
      m = std::max(m, norm(f.at(i, j + 1) - f.at(i, j)) / f.scale());
    }
  return m;
}

}  // namespace

TEST(Field, ConstructionRules) {
  EXPECT_THROW(DisplacementField(1, 5, 10, 10), Error);
  EXPECT_THROW(DisplacementField(10, 10, 5, 10), Error);
  EXPECT_THROW(DisplacementField(10, 10, 100, 300), Error);
  // 2048 x 2000 at scale 4 rounds onto 512 x 500 nodes exactly; 2047 x 2001 rounds onto 512 x 500 too.
  EXPECT_NO_THROW(DisplacementField(512, 500, 2047, 2001));
  const auto [gw, gh] = fitted_grid(2047, 2001, 4.0);
  EXPECT_EQ(gw, 512);
  EXPECT_EQ(gh, 500);
}

TEST(Field, SampleAtNodesAndClamp) {
  DisplacementField f(4, 4, 16, 16);
  f.set(1, 2, {3, -4});
  EXPECT_DOUBLE_EQ(sample_displacement(f, 4, 8).x, 3);
  EXPECT_DOUBLE_EQ(sample_displacement(f, 4, 8).y, -4);
  EXPECT_DOUBLE_EQ(sample_displacement(f, 6, 8).x, 1.5);
  f.set(3, 3, {7, 7});
  EXPECT_DOUBLE_EQ(sample_displacement(f, 1000, 1000).x, 7);
  const DisplacementField c = DisplacementField::constant(4, 4, 16, 16, {5, -2});
  EXPECT_DOUBLE_EQ(sample_displacement(c, -30, 7.7).y, -2);
}

TEST(Compose, IdentityTranslationAndOracle) {
  const DisplacementField f = smooth_field(17, 64, 3.0, 1);
  const DisplacementField same = compose_affine_with_field(AffineTransform(), f);
  for (std::size_t k = 0; k < f.raw().size(); ++k) EXPECT_NEAR(same.raw()[k], f.raw()[k], 1e-12);
  const DisplacementField t = compose_affine_with_field(AffineTransform::translation(4, -1), DisplacementField(17, 17, 64, 64));
  for (int j = 0; j < 17; ++j)
    for (int i = 0; i < 17; ++i) {
      EXPECT_DOUBLE_EQ(t.at(i, j).x, 4);
      EXPECT_DOUBLE_EQ(t.at(i, j).y, -1);
    }

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = 1 + 0.2 * u(rng), b = 0.2 * u(rng), c = 0.2 * u(rng), d = 1 + 0.2 * u(rng);
    const double tx = 20 * u(rng), ty = 20 * u(rng);
    const AffineTransform A(a, b, tx, c, d, ty);
    const DisplacementField g = smooth_field(17, 64, 3.0, rng());
    const DisplacementField v = compose_affine_with_field(A, g);
    for (int j = 0; j < 17; ++j)
      for (int i = 0; i < 17; ++i) {
        const double x = g.node(i, j).x, y = g.node(i, j).y;
        const double ux = g.at(i, j).x, uy = g.at(i, j).y;
        const double ox = a * (x + ux) + b * (y + uy) + tx - x;
        const double oy = c * (x + ux) + d * (y + uy) + ty - y;
        EXPECT_NEAR(v.at(i, j).x, ox, 1e-9);
        EXPECT_NEAR(v.at(i, j).y, oy, 1e-9);
      }
  }
  EXPECT_THROW(compose_affine_with_field(AffineTransform(0, 0, 0, 0, 0, 0), f), Error);
}

TEST(Compose, ZeroFieldIsAffineAsField) {
  const AffineTransform A(0.9, 0.1, 5, -0.05, 1.1, -3);
  EXPECT_EQ(compose_affine_with_field(A, DisplacementField(9, 9, 36, 36)), affine_as_field(A, 9, 9, 36, 36));
}

TEST(Invert, ZeroAndConstant) {
  const FieldInversion z = invert_field(DisplacementField(5, 5, 20, 20));
  EXPECT_EQ(z.nonconverged, 0u);
  EXPECT_EQ(z.field.max_magnitude(), 0.0);
  // A constant field needs exactly two iterations: one to move, one to see it stopped.
  const DisplacementField c = DisplacementField::constant(5, 5, 20, 20, {3, -1});
  EXPECT_EQ(invert_field(c, 0.05, 1).nonconverged, 25u);
  const FieldInversion ci = invert_field(c, 0.05, 2);
  EXPECT_EQ(ci.nonconverged, 0u);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i) {
      EXPECT_DOUBLE_EQ(ci.field.at(i, j).x, -3);
      EXPECT_DOUBLE_EQ(ci.field.at(i, j).y, 1);
    }
}

TEST(Invert, SmoothRoundTrip) {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const DisplacementField u = smooth_field(65, 1024, 15.0, seed);
    ASSERT_LT(max_slope(u), 0.5);
    const FieldInversion inv = invert_field(u);
    EXPECT_EQ(inv.nonconverged, 0u);
    double worst = 0;
    for (int j = 0; j < 65; ++j)
      for (int i = 0; i < 65; ++i) {
        // Skip nodes whose preimage lies off the domain, where the clamped field is not the true one.
        const Point p = u.node(i, j);
        const Point x = p + inv.field.at(i, j);
        if (x.x < 0 || x.y < 0 || x.x > 1024 || x.y > 1024) continue;
        const Point q = x + sample_displacement(u, x.x, x.y);
        worst = std::max(worst, norm(q - p));
      }
    EXPECT_LT(worst, 0.1) << seed;
  }
}

TEST(Dhdf, BitExactRoundTrip) {
  const auto dir = testutil::scratch("dhdf");
  DisplacementField f = smooth_field(33, 200, 7.5, 2);
  f = f.quantized();
  f.set(3, 4, {-0.0, static_cast<double>(1e-30f)});
  const std::string p = (dir / "f.dhdf").string();
  write_dhdf(p, f);
  const DisplacementField g = read_dhdf(p);
  EXPECT_EQ(g, f);
  EXPECT_TRUE(std::signbit(g.at(3, 4).x));
  const auto bytes = testutil::file_bytes(p);
  EXPECT_EQ(bytes.size(), 4u + 4 + 8 + 8 + 4 + 4 + 33u * 33 * 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DHDF");
  write_dhdf((dir / "g.dhdf").string(), g);
  EXPECT_EQ(testutil::file_bytes(dir / "g.dhdf"), bytes);
}

TEST(Dhdf, CorruptFilesAreIoErrors) {
  const auto dir = testutil::scratch("dhdf_bad");
  const std::string p = (dir / "bad.dhdf").string();
  std::ofstream(p) << "DHDX";
  EXPECT_THROW(read_dhdf(p), Error);
  write_dhdf(p, DisplacementField(4, 4, 4, 4));
  std::filesystem::resize_file(p, 40);
  try {
    read_dhdf(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}
