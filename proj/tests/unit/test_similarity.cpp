#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "wsireg/similarity.hpp"

using namespace wsireg;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  return (sab - sa * sb / n) / std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n));
}

Raster row_raster(const std::vector<int>& v) {
  Raster r(static_cast<int>(v.size()), 1, 1);
  for (std::size_t i = 0; i < v.size(); ++i) r.at(static_cast<int>(i), 0) = static_cast<std::uint8_t>(v[i]);
  return r;
}

}  // namespace

TEST(Ncc, SelfIsOneAndReversedIsMinusOne) {
  const Raster a = testutil::noise_raster(32, 32, 1, 1);
  EXPECT_DOUBLE_EQ(ncc_global(a, a), 1.0);
  EXPECT_NEAR(ncc_global(row_raster({1, 2, 3}), row_raster({3, 2, 1})), -1.0, 1e-12);
}

TEST(Ncc, FourSampleHandValue) {
  // a=[0,1,0,1], b=[1,1,0,0]: centered a=[-.5,.5,-.5,.5], b=[.5,.5,-.5,-.5], dot = 0.
  const double expect = pearson({0, 1, 0, 1}, {1, 1, 0, 0});
  EXPECT_NEAR(expect, 0.0, 1e-15);
  EXPECT_NEAR(ncc_global(row_raster({0, 1, 0, 1}), row_raster({1, 1, 0, 0})), expect, 1e-12);
}

TEST(Ncc, MatchesOracleSymmetricAndBounded) {
  std::mt19937 rng(5);
  for (int t = 0; t < 20; ++t) {
    const Raster a = testutil::noise_raster(17, 13, 1, rng()), b = testutil::noise_raster(17, 13, 1, rng());
    std::vector<double> va(a.bytes().begin(), a.bytes().end()), vb(b.bytes().begin(), b.bytes().end());
    const double n = ncc_global(a, b);
    EXPECT_NEAR(n, pearson(va, vb), 1e-12);
    EXPECT_DOUBLE_EQ(n, ncc_global(b, a));
    EXPECT_LE(std::abs(n), 1.0);
  }
}

TEST(Ncc, AffineIntensityGivesOne) {
  const Raster a = testutil::noise_raster(20, 20, 1, 2);
  Raster b = a;
  for (auto& v : b.bytes()) v = static_cast<std::uint8_t>(v / 3 * 2 + 10);
  std::vector<double> va(a.bytes().begin(), a.bytes().end());
  std::vector<double> vb(va);
  for (auto& v : vb) v = 3 * v + 1;
  EXPECT_NEAR((ncc<double, double>(va, vb)), 1.0, 1e-12);
}

TEST(Ncc, ZeroVarianceAndMask) {
  EXPECT_EQ(ncc_global(Raster(8, 8, 1, 5), testutil::noise_raster(8, 8, 1, 3)), 0.0);
  const Raster a = testutil::noise_raster(8, 8, 1, 1), b = testutil::noise_raster(8, 8, 1, 2);
  const Raster few(8, 8, 1, 0);
  EXPECT_EQ(ncc_global(a, b, &few), 0.0);
  EXPECT_THROW(ncc_global(a, Raster(8, 9, 1)), Error);
}

TEST(Mind, ConstantImageAllChannelsEqual) {
  const DescriptorImage d = mind_descriptors(Raster(10, 10, 1, 100));
  for (float v : d.values) EXPECT_EQ(v, 1.0f);
}

TEST(Mind, MaxNormalized) {
  const DescriptorImage d = mind_descriptors(testutil::noise_raster(16, 16, 1, 4));
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      float m = 0;
      for (int c = 0; c < 4; ++c) m = std::max(m, d.at(x, y, c));
      EXPECT_EQ(m, 1.0f);
    }
  }
}

TEST(Mind, SinglePixelSymmetry) {
  Raster r(11, 11, 1, 0);
  r.at(5, 5) = 255;
  const DescriptorImage d = mind_descriptors(r);
  for (int c = 1; c < 4; ++c) EXPECT_FLOAT_EQ(d.at(5, 5, c), d.at(5, 5, 0));
}

TEST(Mind, AffineIntensityInvariance) {
  // I in [0, 100] so that 2I + 20 stays in range.
  Raster a(48, 48, 1);
  const Raster base = testutil::noise_raster(48, 48, 1, 6);
  for (std::size_t i = 0; i < a.size_bytes(); ++i) a.data()[i] = base.data()[i] % 101;
  Raster b = a;
  for (auto& v : b.bytes()) v = static_cast<std::uint8_t>(2 * v + 20);
  const DescriptorImage da = mind_descriptors(a), db = mind_descriptors(b);
  double worst = 0;
  for (std::size_t i = 0; i < da.values.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(da.values[i] - db.values[i])));
  EXPECT_LT(worst, 1e-5);
}

TEST(Mind, FloorOnlyActsOnNearlyFlatPatches) {
  // Unit step in grey: at (9, 5) the distances are {0, 0, 3, 0}, mean 0.75, above the floor.
  Raster r(16, 16, 1, 100);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) r.at(x, y) = 101;
  const DescriptorImage d = mind_descriptors(r);
  EXPECT_NEAR(d.at(9, 5, 2), std::exp(-3.0 / 0.75), 1e-6);
  EXPECT_EQ(d.at(9, 5, 3), 1.0f);
  // One raised pixel at (8, 8): at (10, 8) the distances are {0, 0, 1, 0}, mean 0.25, below the floor.
  Raster s(16, 16, 1, 100);
  s.at(8, 8) = 101;
  const double eps = MindOptions{}.epsilon;
  EXPECT_NEAR(mind_descriptors(s).at(10, 8, 2), std::exp(-1.0 / eps), 1e-6);
}

TEST(Mind, MatchesDirectDefinition) {
  const Raster r = testutil::noise_raster(12, 9, 1, 11);
  const DescriptorImage d = mind_descriptors(r);
  auto I = [&](int x, int y) { return static_cast<double>(r.at(std::clamp(x, 0, 11), std::clamp(y, 0, 8))); };
  const double eps = 1e-5 * 255.0 * 255.0;
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 12; ++x) {
      double dist[4], v = 0;
      for (int n = 0; n < 4; ++n) {
        double s = 0;
        for (int oy = -1; oy <= 1; ++oy)
          for (int ox = -1; ox <= 1; ++ox) {
            const double t = I(x + ox, y + oy) - I(x + ox + kMindOffsets[n][0], y + oy + kMindOffsets[n][1]);
            s += t * t;
          }
        dist[n] = s;
        v += 0.25 * s;
      }
      double e[4], m = 0;
      for (int n = 0; n < 4; ++n) m = std::max(m, e[n] = std::exp(-dist[n] / std::max(v, eps)));
      for (int n = 0; n < 4; ++n) EXPECT_NEAR(d.at(x, y, n), e[n] / m, 1e-6);
    }
  }
}

TEST(MindCost, ZeroForEqualAndShiftCompensated) {
  const Raster r = testutil::smooth_raster(32, 32, 2);
  const DescriptorImage d = mind_descriptors(r);
  const double s = 4.0;
  DisplacementField zero(32, 32, 128, 128);
  EXPECT_EQ(mind_data_cost(d, d, zero, s), 0.0);

  Raster shifted(32, 32, 1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) shifted.at(x, y) = r.at(std::max(x - 1, 0), y);
  const DescriptorImage dm = mind_descriptors(shifted);
  const DisplacementField one = DisplacementField::constant(32, 32, 128, 128, {s, 0});
  // Interior pixels match exactly; only the clamped last column may differ.
  double interior = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 2; x < 29; ++x) {
      double smp[4];
      sample_descriptor(dm, x + 1, y, smp);
      for (int c = 0; c < 4; ++c) interior += std::pow(smp[c] - d.at(x, y, c), 2);
    }
  }
  EXPECT_EQ(interior, 0.0);
  EXPECT_LT(mind_data_cost(d, dm, one, s), mind_data_cost(d, dm, zero, s));
}

TEST(MindCost, MatchesNaiveOracle) {
  std::mt19937 rng(17);
  std::normal_distribution<double> nd(0.0, 6.0);
  const DescriptorImage df = mind_descriptors(testutil::noise_raster(64, 64, 1, 1));
  const DescriptorImage dm = mind_descriptors(testutil::smooth_raster(64, 64, 2));
  const double s = 2.0;
  DisplacementField f(64, 64, 128, 128);
  for (double& v : f.raw()) v = nd(rng);

  auto at = [&](int x, int y, int c) { return static_cast<double>(dm.at(std::clamp(x, 0, 63), std::clamp(y, 0, 63), c)); };
  double total = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const Point u = f.at(x, y);
      const double px = std::clamp(x + u.x / s, 0.0, 63.0), py = std::clamp(y + u.y / s, 0.0, 63.0);
      const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
      const double tx = px - x0, ty = py - y0;
      for (int c = 0; c < 4; ++c) {
        const double v = (1 - tx) * (1 - ty) * at(x0, y0, c) + tx * (1 - ty) * at(x0 + 1, y0, c) +
                         (1 - tx) * ty * at(x0, y0 + 1, c) + tx * ty * at(x0 + 1, y0 + 1, c);
        total += (v - df.at(x, y, c)) * (v - df.at(x, y, c));
      }
    }
  }
  const double oracle = total / (64.0 * 64.0);
  const double got = mind_data_cost(df, dm, f, s);
  EXPECT_GT(got, 0.0);
  EXPECT_LE(std::abs(got - oracle), 1e-10 * oracle);
}

TEST(MindCost, RejectsMismatch) {
  const DescriptorImage a = mind_descriptors(Raster(8, 8, 1)), b = mind_descriptors(Raster(9, 8, 1));
  EXPECT_THROW(mind_data_cost(a, b, DisplacementField(8, 8, 8, 8), 1.0), Error);
  EXPECT_THROW(mind_data_cost(a, a, DisplacementField(9, 8, 9, 8), 1.0), Error);
}
