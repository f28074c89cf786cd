#pragma once

/// @file raster.hpp
/// In-memory 8-bit raster (row-major, channel-interleaved) and the small
/// pixel helpers shared by the IO, preprocessing and warping code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>

#include "wsireg/error.hpp"
#include "wsireg/memory.hpp"

namespace wsireg {

inline constexpr std::uint8_t kWhite = 255;

/// Rounds half up and clamps to [0, 255].
inline std::uint8_t to_u8(double v) {
  double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels, std::uint8_t fill = 0) { reset(width, height, channels, fill); }

  void reset(int width, int height, int channels, std::uint8_t fill = 0) {
    if (width < 0 || height < 0) throw_argument("raster dimensions must be non-negative");
    if (channels != 1 && channels != 3) throw_argument("raster channels must be 1 or 3, got " + std::to_string(channels));
    width_ = width;
    height_ = height;
    channels_ = channels;
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t size_bytes() const noexcept { return data_.size(); }
  std::size_t row_bytes() const noexcept { return static_cast<std::size_t>(width_) * channels_; }

  std::uint8_t* data() noexcept { return data_.data(); }
  const std::uint8_t* data() const noexcept { return data_.data(); }
  std::span<std::uint8_t> bytes() noexcept { return {data_.data(), data_.size()}; }
  std::span<const std::uint8_t> bytes() const noexcept { return {data_.data(), data_.size()}; }

  std::uint8_t* row(int y) noexcept { return data_.data() + static_cast<std::size_t>(y) * row_bytes(); }
  const std::uint8_t* row(int y) const noexcept { return data_.data() + static_cast<std::size_t>(y) * row_bytes(); }

  std::uint8_t& at(int x, int y, int c = 0) noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  bool same_shape(const Raster& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }
  bool operator==(const Raster& o) const noexcept {
    return same_shape(o) && std::equal(data_.begin(), data_.end(), o.data_.begin());
  }

  /// Copies a w x h block of `src` starting at (sx, sy) to (dx, dy) here. No clipping.
  void blit(const Raster& src, int sx, int sy, int w, int h, int dx, int dy) {
    const std::size_t n = static_cast<std::size_t>(w) * channels_;
    for (int r = 0; r < h; ++r) {
      std::memcpy(row(dy + r) + static_cast<std::size_t>(dx) * channels_,
                  src.row(sy + r) + static_cast<std::size_t>(sx) * channels_, n);
    }
  }

  Raster crop(int x, int y, int w, int h) const {
    Raster out(w, h, channels_);
    out.blit(*this, x, y, w, h, 0, 0);
    return out;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  TrackedVector<std::uint8_t> data_;
};

/// Axis-aligned integer rectangle, half-open.
struct Rect {
  long long x = 0;
  long long y = 0;
  long long w = 0;
  long long h = 0;

  bool empty() const noexcept { return w <= 0 || h <= 0; }
  Rect intersect(const Rect& o) const noexcept {
    long long x0 = std::max(x, o.x), y0 = std::max(y, o.y);
    long long x1 = std::min(x + w, o.x + o.w), y1 = std::min(y + h, o.y + o.h);
    return {x0, y0, std::max(0LL, x1 - x0), std::max(0LL, y1 - y0)};
  }
};

}  // namespace wsireg
