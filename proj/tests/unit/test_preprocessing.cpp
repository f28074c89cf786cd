#include <gtest/gtest.h>

#include "test_util.hpp"
#include "wsireg/preprocessing.hpp"

using namespace wsireg;

namespace {
Raster rgb_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Raster px(1, 1, 3);
  px.at(0, 0, 0) = r;
  px.at(0, 0, 1) = g;
  px.at(0, 0, 2) = b;
  return px;
}
}  // namespace

TEST(Grayscale, Rec601Luma) {
  EXPECT_EQ(to_grayscale(rgb_pixel(255, 255, 255)).at(0, 0), 255);
  EXPECT_EQ(to_grayscale(rgb_pixel(0, 0, 0)).at(0, 0), 0);
  EXPECT_EQ(to_grayscale(rgb_pixel(255, 0, 0)).at(0, 0), 76);  // round(0.299 * 255) = round(76.245)
  EXPECT_EQ(to_grayscale(rgb_pixel(0, 255, 0)).at(0, 0), 150);  // round(149.685)
  EXPECT_EQ(to_grayscale(rgb_pixel(0, 0, 255)).at(0, 0), 29);   // round(29.07)
}

TEST(Normalize, ConstantIsDegenerate) {
  const NormalizedRaster n = normalize_intensity(Raster(10, 10, 1, 90));
  EXPECT_TRUE(n.degenerate);
  for (auto v : n.image.bytes()) EXPECT_EQ(v, 0);
}

TEST(Normalize, FullRangeIsPureInversion) {
  Raster r(256, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 256; ++x) r.at(x, y) = static_cast<std::uint8_t>(x);
  // Percentiles 0 and 100 give exactly [0, 255].
  const NormalizedRaster n = normalize_intensity(r, {0.0, 100.0});
  for (int x = 0; x < 256; ++x) EXPECT_EQ(n.image.at(x, 2), 255 - x);
}

TEST(Normalize, TwoValueImage) {
  Raster r(100, 10, 1, 50);
  for (int x = 0; x < 100; ++x) r.at(x, 9) = 200;  // 10% of pixels
  const NormalizedRaster n = normalize_intensity(r);
  EXPECT_EQ(n.low, 50);
  EXPECT_EQ(n.high, 200);
  EXPECT_EQ(n.image.at(0, 0), 255);
  EXPECT_EQ(n.image.at(0, 9), 0);
}

TEST(Normalize, PercentileNearestRank) {
  std::array<std::uint64_t, 256> h{};
  h[10] = 3;
  h[20] = 7;
  EXPECT_EQ(histogram_percentile(h, 10, 30), 10);  // rank 3
  EXPECT_EQ(histogram_percentile(h, 10, 31), 20);  // rank 4
  EXPECT_EQ(histogram_percentile(h, 10, 0), 10);
}

TEST(Normalize, AffineIntensityInvariance) {
  const Raster r = testutil::smooth_raster(64, 64, 3);
  Raster s(64, 64, 1);
  for (std::size_t i = 0; i < r.size_bytes(); ++i) s.data()[i] = static_cast<std::uint8_t>(r.data()[i] / 2 + 40);
  const Raster a = normalize_intensity(r).image, b = normalize_intensity(s).image;
  int worst = 0;
  for (std::size_t i = 0; i < a.size_bytes(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  // Halving the input loses one bit, which the x2 stretch turns into up to 2 levels.
  EXPECT_LE(worst, 2);
}

TEST(Preprocess, IdenticalImagesGiveIdenticalRasters) {
  const PyramidImage img = PyramidImage::from_raster(testutil::noise_raster(300, 200, 3, 2));
  const PreprocessedPair p = preprocess_pair(img, img, 150);
  EXPECT_EQ(p.fixed, p.moving);
  EXPECT_DOUBLE_EQ(p.scale, 2.0);
  EXPECT_EQ(p.fixed.width(), 150);
  EXPECT_EQ(p.fixed.height(), 100);
}

TEST(Preprocess, CommonScaleAndPadding) {
  // 400x400 and 200x400, target 128: scale 400 / 128 = 3.125.
  const PyramidImage a = PyramidImage::from_raster(testutil::noise_raster(400, 400, 1, 1));
  const PyramidImage b = PyramidImage::from_raster(testutil::noise_raster(200, 400, 1, 2));
  const PreprocessedPair p = preprocess_pair(a, b, 128);
  EXPECT_DOUBLE_EQ(p.scale, 400.0 / 128.0);
  EXPECT_EQ(p.fixed.width(), 128);
  EXPECT_EQ(p.moving.width(), 128);
  EXPECT_EQ(p.moving_width, 64);
  EXPECT_EQ(p.moving.at(100, 50), 0);
}

TEST(Preprocess, LargeSlideScaleArithmetic) {
  // Scale only depends on the long sides; the reads are what a 40000 px slide would need.
  EXPECT_NEAR(40000.0 / 4096, 9.765625, 1e-12);
  const PyramidImage a = PyramidImage::from_raster(Raster(625, 625, 1, 200));
  const PreprocessedPair p = preprocess_pair(a, a, 64);
  EXPECT_DOUBLE_EQ(p.scale, 625.0 / 64.0);
}

TEST(Preprocess, UpsamplingConstantStaysConstant) {
  const PyramidImage a = PyramidImage::from_raster(Raster(50, 40, 1, 77));
  const Raster up = read_at_scale(a, 0.5);
  EXPECT_EQ(up.width(), 100);
  for (auto v : up.bytes()) EXPECT_EQ(v, 77);
}

TEST(Preprocess, LevelChoiceKeepsResolution) {
  const auto dir = testutil::scratch("pre_level");
  const Raster r = testutil::smooth_raster(512, 512, 4);
  const std::string p = (dir / "a.tiff").string();
  save_pyramid_tiff(raster_source(r), p, 128, 3);
  const PyramidImage img = load_image(p);
  EXPECT_EQ(level_for_scale(img, 1.0), 0);
  EXPECT_EQ(level_for_scale(img, 2.0), 1);
  EXPECT_EQ(level_for_scale(img, 3.9), 1);
  EXPECT_EQ(level_for_scale(img, 64.0), 2);
}

TEST(Preprocess, Deterministic) {
  const PyramidImage a = PyramidImage::from_raster(testutil::noise_raster(333, 222, 3, 8));
  const PyramidImage b = PyramidImage::from_raster(testutil::noise_raster(222, 333, 3, 9));
  const PreprocessedPair p = preprocess_pair(a, b, 100), q = preprocess_pair(a, b, 100);
  EXPECT_EQ(p.fixed, q.fixed);
  EXPECT_EQ(p.moving, q.moving);
}
