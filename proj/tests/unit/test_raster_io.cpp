#include <gtest/gtest.h>

#include "test_util.hpp"
#include "wsireg/png.hpp"
#include "wsireg/raster.hpp"

using namespace wsireg;

TEST(ToU8, RoundsHalfUpAndClamps) {
  EXPECT_EQ(to_u8(127.5), 128);
  EXPECT_EQ(to_u8(127.49), 127);
  EXPECT_EQ(to_u8(-3.0), 0);
  EXPECT_EQ(to_u8(300.0), 255);
}

TEST(Raster, RejectsBadShapes) {
  EXPECT_THROW(Raster(4, 4, 2), Error);
  EXPECT_THROW(Raster(-1, 4, 1), Error);
}

TEST(Raster, CropAndBlit) {
  Raster r = testutil::noise_raster(20, 10, 3, 1);
  Raster c = r.crop(5, 2, 7, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 7; ++x)
      for (int k = 0; k < 3; ++k) EXPECT_EQ(c.at(x, y, k), r.at(x + 5, y + 2, k));
  Raster z(20, 10, 3, 0);
  z.blit(c, 0, 0, 7, 4, 5, 2);
  EXPECT_EQ(z.crop(5, 2, 7, 4), c);
}

TEST(Rect, Intersect) {
  const Rect a{0, 0, 10, 10}, b{5, 8, 10, 10};
  const Rect i = a.intersect(b);
  EXPECT_EQ(i.x, 5);
  EXPECT_EQ(i.y, 8);
  EXPECT_EQ(i.w, 5);
  EXPECT_EQ(i.h, 2);
  EXPECT_TRUE(a.intersect(Rect{20, 20, 1, 1}).empty());
}

TEST(Memory, TrackerCountsRasterBuffers) {
  auto& t = MemoryTracker::instance();
  const std::size_t before = t.current();
  {
    Raster r(100, 100, 3);
    EXPECT_GE(t.current(), before + 30000);
  }
  EXPECT_EQ(t.current(), before);
}

TEST(Png, RoundTripGrayAndRgb) {
  const auto dir = testutil::scratch("png");
  for (int ch : {1, 3}) {
    const Raster r = testutil::noise_raster(37, 23, ch, 7 + ch);
    const std::string p = (dir / ("r" + std::to_string(ch) + ".png")).string();
    png::write(p, r);
    EXPECT_EQ(png::read(p), r);
  }
}

TEST(Png, MissingFileIsIoError) {
  try {
    png::read("/nonexistent/none.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}
