#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "test_util.hpp"
#include "wsireg/annotations.hpp"

using namespace wsireg;

namespace {

LandmarkSet points(Frame frame, std::vector<Point> p) {
  LandmarkSet s;
  s.frame = frame;
  s.points = std::move(p);
  return s;
}

DisplacementField smooth_total(unsigned seed) {
  // Affine part plus a gentle wave, like a registration result.
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  const AffineTransform A(std::cos(0.4), -std::sin(0.4), 120 + 30 * u(rng), std::sin(0.4), std::cos(0.4), -40 + 30 * u(rng));
  DisplacementField f(65, 65, 1024, 1024);
  for (int j = 0; j < 65; ++j)
    for (int i = 0; i < 65; ++i) {
      const Point p = f.node(i, j);
      const Point w{15 * std::sin(p.y / 150.0), 15 * std::cos(p.x / 170.0)};
      f.set(i, j, A.apply(p + w) - p);
    }
  return f;
}

}  // namespace

TEST(TransformPoints, ZeroFieldIsIdentity) {
  const DisplacementField zero(8, 8, 64, 64);
  const LandmarkSet in = points(Frame::fixed, {{1, 2}, {30.5, 60}});
  const LandmarkSet out = transform_points(in, zero, Direction::fixed_to_moving);
  EXPECT_EQ(out.frame, Frame::moving);
  EXPECT_DOUBLE_EQ(out.points[1].x, 30.5);
  const LandmarkSet back = transform_points(out, zero, Direction::moving_to_fixed);
  EXPECT_DOUBLE_EQ(back.points[0].y, 2);
}

TEST(TransformPoints, ConstantTranslation) {
  const DisplacementField c = DisplacementField::constant(8, 8, 64, 64, {5, 0});
  const LandmarkSet m = transform_points(points(Frame::fixed, {{10, 10}}), c, Direction::fixed_to_moving);
  EXPECT_DOUBLE_EQ(m.points[0].x, 15);
  EXPECT_DOUBLE_EQ(m.points[0].y, 10);
  const LandmarkSet f = transform_points(points(Frame::moving, {{15, 10}}), c, Direction::moving_to_fixed);
  EXPECT_NEAR(f.points[0].x, 10, 1e-9);
  EXPECT_NEAR(f.points[0].y, 10, 1e-9);
  EXPECT_TRUE(f.all_converged());
}

TEST(TransformPoints, RoundTripOnSmoothField) {
  const DisplacementField f = smooth_total(1);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(100, 900);
  LandmarkSet in;
  for (int i = 0; i < 200; ++i) in.points.push_back({u(rng), u(rng)});
  const LandmarkSet m = transform_points(in, f, Direction::fixed_to_moving);
  const LandmarkSet back = transform_points(m, f, Direction::moving_to_fixed);
  ASSERT_EQ(back.size(), in.size());
  EXPECT_TRUE(back.all_converged());
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_LT(norm(back.points[i] - in.points[i]), 0.1);
}

TEST(TransformPoints, FrameMustMatchDirection) {
  const DisplacementField zero(4, 4, 4, 4);
  EXPECT_THROW(transform_points(points(Frame::moving, {{0, 0}}), zero, Direction::fixed_to_moving), Error);
  EXPECT_THROW(parse_direction("sideways"), Error);
}

TEST(TransformPoints, NonConvergedPointsAreKeptAndFlagged) {
  // One Newton step moves a constant field's point by 5 px, so a one-step budget cannot confirm convergence.
  const DisplacementField c = DisplacementField::constant(4, 4, 40, 40, {5, 0});
  const LandmarkSet in = points(Frame::moving, {{12, 12}, {30, 7}});
  const LandmarkSet out = transform_points(in, c, Direction::moving_to_fixed, {0.05, 1});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_FALSE(out.converged[0]);
  EXPECT_FALSE(out.converged[1]);
  EXPECT_NEAR(out.points[1].x, 25, 1e-12);
  const LandmarkSet ok = transform_points(in, c, Direction::moving_to_fixed);
  EXPECT_TRUE(ok.converged[0]);
  EXPECT_NEAR(ok.points[0].x, 7, 1e-9);
}

TEST(Rtre, Arithmetic) {
  const RtreSummary s = compute_rtre(points(Frame::fixed, {{0, 0}, {0, 0}, {0, 0}}),
                                     points(Frame::fixed, {{30, 40}, {0, 0}, {0, 100}}), 5000);
  EXPECT_DOUBLE_EQ(s.values[0], 0.01);
  EXPECT_DOUBLE_EQ(s.median, 0.01);
  EXPECT_DOUBLE_EQ(s.max, 0.02);
  EXPECT_DOUBLE_EQ(s.mean, 0.01);
  EXPECT_THROW(compute_rtre(points(Frame::fixed, {{0, 0}}), points(Frame::fixed, {}), 1), Error);
  EXPECT_THROW(compute_rtre(points(Frame::fixed, {}), points(Frame::fixed, {}), 0), Error);
  EXPECT_DOUBLE_EQ(median_of({4, 1, 3, 2}), 2.5);
}

TEST(Rtre, RigidMotionInvariance) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 1000);
  LandmarkSet a, b;
  for (int i = 0; i < 50; ++i) {
    a.points.push_back({u(rng), u(rng)});
    b.points.push_back({u(rng), u(rng)});
  }
  const AffineTransform R = AffineTransform::translation(37, -12) * AffineTransform::rotation(63);
  LandmarkSet ra = a, rb = b;
  for (auto& p : ra.points) p = R.apply(p);
  for (auto& p : rb.points) p = R.apply(p);
  const RtreSummary s = compute_rtre(a, b, 1414), t = compute_rtre(ra, rb, 1414);
  for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_NEAR(s.values[i], t.values[i], 1e-12);
}

TEST(LandmarkCsv, RoundTripAndFlags) {
  const auto dir = testutil::scratch("csv");
  LandmarkSet s = points(Frame::fixed, {{1.25, 2.5}, {1e-3, 12345.678901234}});
  write_landmarks((dir / "a.csv").string(), s);
  const LandmarkSet r = read_landmarks((dir / "a.csv").string(), Frame::fixed);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r.points[1].y, 12345.678901234);
  s.converged = {true, false};
  write_landmarks((dir / "b.csv").string(), s);
  std::ifstream is(dir / "b.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "x,y,converged");
  EXPECT_EQ(read_landmarks((dir / "b.csv").string(), Frame::fixed).size(), 2u);
}

TEST(LandmarkCsv, BomAndBadInput) {
  const auto dir = testutil::scratch("csv_bad");
  std::ofstream((dir / "bom.csv")) << "\xEF\xBB\xBFx,y\r\n3,4\r\n";
  EXPECT_DOUBLE_EQ(read_landmarks((dir / "bom.csv").string(), Frame::fixed).points[0].y, 4);
  std::ofstream((dir / "hdr.csv")) << "a,b\n1,2\n";
  EXPECT_THROW(read_landmarks((dir / "hdr.csv").string(), Frame::fixed), Error);
  std::ofstream((dir / "num.csv")) << "x,y\n1,zz\n";
  EXPECT_THROW(read_landmarks((dir / "num.csv").string(), Frame::fixed), Error);
}

TEST(WarpMask, NoNewLabelsAndIdentity) {
  const auto dir = testutil::scratch("mask");
  Raster m(120, 100, 1, 0);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 120; ++x) m.at(x, y) = static_cast<std::uint8_t>(((x / 20) + (y / 25)) % 3 * 7);
  const PyramidImage src = PyramidImage::from_raster(m, 32);
  const DisplacementField zero(30, 25, 120, 100);
  warp_mask(src, zero, 120, 100, (dir / "id.tiff").string(), 32);
  EXPECT_EQ(read_level(load_image((dir / "id.tiff").string()), 0), m);

  const DisplacementField f = smooth_total(5);
  DisplacementField g(30, 25, 120, 100);
  for (int j = 0; j < 25; ++j)
    for (int i = 0; i < 30; ++i) g.set(i, j, {0.37 * f.at(i, j).x * 0.1, 0.41 * f.at(i, j).y * 0.1});
  warp_mask(src, g, 120, 100, (dir / "w.tiff").string(), 32);
  const Raster w = read_level(load_image((dir / "w.tiff").string()), 0);
  const std::set<int> allowed{0, 7, 14};
  for (auto v : w.bytes()) EXPECT_TRUE(allowed.count(v));

  const DisplacementField shift = DisplacementField::constant(30, 25, 120, 100, {20, 0});
  warp_mask(src, shift, 120, 100, (dir / "s.tiff").string(), 32);
  const Raster s = read_level(load_image((dir / "s.tiff").string()), 0);
  EXPECT_EQ(s.crop(0, 0, 100, 100), m.crop(20, 0, 100, 100));
}
