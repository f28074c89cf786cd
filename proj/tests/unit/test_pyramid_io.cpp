#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "wsireg/pyramid_io.hpp"

using namespace wsireg;

TEST(PyramidLaw, HalvedDims) {
  EXPECT_EQ(halved_dim(1000, 0), 1000);
  EXPECT_EQ(halved_dim(1000, 1), 500);
  EXPECT_EQ(halved_dim(1001, 1), 501);
  EXPECT_EQ(halved_dim(1001, 3), 126);
}

TEST(PyramidLaw, RejectsNonHalvingChain) {
  std::vector<LevelDescriptor> ok{{1001, 601, 256, 256}, {501, 301, 256, 256}, {251, 151, 256, 256}};
  EXPECT_NO_THROW(validate_pyramid_chain(ok));
  ok[2].width = 250;
  EXPECT_THROW(validate_pyramid_chain(ok), Error);
}

TEST(Downsample, BoxMeanRoundsHalfUp) {
  Raster r(2, 2, 1);
  r.at(0, 0) = 0;
  r.at(1, 0) = 0;
  r.at(0, 1) = 255;
  r.at(1, 1) = 255;
  EXPECT_EQ(downsample_box2(r).at(0, 0), 128);
}

TEST(Downsample, OddEdgeAveragesPresentSamples) {
  Raster r(3, 1, 1);
  r.at(0, 0) = 10;
  r.at(1, 0) = 20;
  r.at(2, 0) = 7;
  const Raster d = downsample_box2(r);
  ASSERT_EQ(d.width(), 2);
  EXPECT_EQ(d.at(0, 0), 15);
  EXPECT_EQ(d.at(1, 0), 7);
}

class TiffRoundTrip : public ::testing::TestWithParam<std::tuple<int, int, int, int>> {};

TEST_P(TiffRoundTrip, AllLevelsMatchBoxPyramid) {
  const auto [w, h, ch, tile] = GetParam();
  const auto dir = testutil::scratch("tiff_rt");
  const Raster r = testutil::noise_raster(w, h, ch, 3);
  const std::string p = (dir / "img.tiff").string();
  const int levels = 3;
  save_pyramid_tiff(raster_source(r), p, tile, levels);
  const PyramidImage img = load_image(p);
  ASSERT_EQ(img.num_levels(), levels);
  EXPECT_EQ(img.width(), w);
  EXPECT_EQ(img.height(), h);
  EXPECT_EQ(img.channels(), ch);
  Raster expect = r;
  for (int k = 0; k < levels; ++k) {
    EXPECT_EQ(read_level(img, k), expect) << "level " << k;
    expect = downsample_box2(expect);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, TiffRoundTrip,
                         ::testing::Values(std::make_tuple(300, 200, 3, 64), std::make_tuple(257, 129, 1, 128),
                                           std::make_tuple(64, 64, 3, 16), std::make_tuple(513, 77, 1, 512)));

TEST(ReadRegion, OutsideIsFillAndInsideMatches) {
  const auto dir = testutil::scratch("region");
  const Raster r = testutil::noise_raster(200, 150, 3, 9);
  const std::string p = (dir / "img.tiff").string();
  save_pyramid_tiff(raster_source(r), p, 64, 1);
  const PyramidImage img = load_image(p);
  RegionStats st;
  const Raster win = read_region(img, 0, -10, 140, 50, 30, 7, nullptr, &st);
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 50; ++x) {
      const int sx = x - 10, sy = y + 140;
      for (int c = 0; c < 3; ++c) {
        const int want = (sx < 0 || sy >= 150) ? 7 : r.at(sx, sy, c);
        ASSERT_EQ(win.at(x, y, c), want);
      }
    }
  }
  EXPECT_EQ(st.tiles_read, 1u);  // only tile (0, 2) intersects
}

TEST(ReadRegion, CacheGivesSameBytes) {
  const auto dir = testutil::scratch("cache");
  const Raster r = testutil::noise_raster(300, 300, 1, 2);
  const std::string p = (dir / "img.tiff").string();
  save_pyramid_tiff(raster_source(r), p, 64, 2);
  const PyramidImage img = load_image(p);
  TileCache cache(4);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(read_region(img, 0, 30 * i, 20 * i, 90, 90, 0, &cache), r.crop(30 * i, 20 * i, 90, 90));
  }
}

TEST(LoadImage, PngIsSingleLevel) {
  const auto dir = testutil::scratch("pngload");
  const Raster r = testutil::noise_raster(40, 30, 3, 4);
  const std::string p = (dir / "a.png").string();
  png::write(p, r);
  const PyramidImage img = load_image(p);
  EXPECT_EQ(img.num_levels(), 1);
  EXPECT_EQ(read_level(img, 0), r);
}

TEST(LoadImage, GarbageIsIoError) {
  const auto dir = testutil::scratch("garbage");
  const std::string p = (dir / "bad.tiff").string();
  std::ofstream(p) << "this is not an image";
  try {
    load_image(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Writer, RejectsBadTileSizeAndShortSource) {
  const auto dir = testutil::scratch("writer");
  EXPECT_THROW(PyramidTiffWriter((dir / "a.tiff").string(), 100, 100, 1, 100, 1), Error);
  PyramidTiffWriter w((dir / "b.tiff").string(), 100, 100, 1, 64, 1);
  w.push(Raster(64, 64, 1));
  EXPECT_THROW(w.push(Raster(64, 64, 1)), Error);  // second tile is 36 wide
  EXPECT_THROW(w.finish(), Error);
}

TEST(AutoLevels, CoarsestSideAtLeastMin) {
  EXPECT_EQ(auto_num_levels(2048, 2048), 4);
  EXPECT_EQ(auto_num_levels(200, 100), 1);
}

TEST(Resample, IdentityAndAreaMean) {
  const Raster r = testutil::noise_raster(16, 16, 1, 5);
  EXPECT_EQ(resample(r, 1.0), r);
  Raster c(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) c.at(x, y) = static_cast<std::uint8_t>(x < 2 ? 0 : 200);
  // Factor 0.5 with offset 0.5 centers each output box on a 2x2 block.
  const Raster d = resample(c, 0.5, 0.5);
  EXPECT_EQ(d.at(0, 0), 0);
  EXPECT_EQ(d.at(1, 0), 200);
}

TEST(PadToCommon, PadsBottomRight) {
  const auto [a, b] = pad_to_common(Raster(3, 5, 1, 9), Raster(4, 2, 1, 9), 0);
  EXPECT_EQ(a.width(), 4);
  EXPECT_EQ(b.height(), 5);
  EXPECT_EQ(a.at(3, 0), 0);
  EXPECT_EQ(b.at(0, 4), 0);
  EXPECT_EQ(b.at(3, 1), 9);
}
