#pragma once

/// @file pyramid_io.hpp
/// Multi-level slide access: loading tiled/striped pyramidal TIFF and PNG,
/// region reads that touch only the intersecting tiles, a streaming pyramid
/// writer, and the padding/resampling primitives used before registration.
///
/// Pyramid law: level k is ceil(level0 / 2^k) in each dimension. Files that
/// break it are rejected rather than silently resampled.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "wsireg/error.hpp"
#include "wsireg/memory.hpp"
#include "wsireg/png.hpp"
#include "wsireg/raster.hpp"
#include "wsireg/tiff.hpp"

namespace wsireg {

inline constexpr int kDefaultTileSize = 512;

struct LevelDescriptor {
  long long width = 0;
  long long height = 0;
  int tile_width = 0;   ///< equals tile_height for tiled files; strips span the full width
  int tile_height = 0;

  int tile_size() const noexcept { return tile_width; }
  long long tiles_across() const noexcept { return (width + tile_width - 1) / tile_width; }
  long long tiles_down() const noexcept { return (height + tile_height - 1) / tile_height; }
};

/// ceil(n / 2^k)
inline long long halved_dim(long long n, int k) { return (n + (1LL << k) - 1) >> k; }

/// LRU cache of decoded tiles. Not thread-safe; one per worker.
class TileCache {
 public:
  explicit TileCache(std::size_t capacity = 8) : capacity_(capacity) {}

  const TrackedVector<std::uint8_t>* find(int level, std::size_t index) {
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (it->level == level && it->index == index) {
        entries_.splice(entries_.begin(), entries_, it);
        return &entries_.front().data;
      }
    }
    return nullptr;
  }

  const TrackedVector<std::uint8_t>& insert(int level, std::size_t index, TrackedVector<std::uint8_t> data) {
    if (capacity_ == 0) {
      scratch_ = std::move(data);
      return scratch_;
    }
    if (entries_.size() >= capacity_) entries_.pop_back();
    entries_.push_front({level, index, std::move(data)});
    return entries_.front().data;
  }

  void clear() {
    entries_.clear();
    scratch_ = {};
  }

 private:
  struct Entry {
    int level;
    std::size_t index;
    TrackedVector<std::uint8_t> data;
  };
  std::size_t capacity_;
  std::list<Entry> entries_;
  TrackedVector<std::uint8_t> scratch_;
};

/// Read statistics for one region request.
struct RegionStats {
  std::size_t tiles_read = 0;
};

/// Immutable handle to a multi-level image. Copies share the backing store,
/// and concurrent read_region calls on one image are safe.
class PyramidImage {
 public:
  PyramidImage() = default;

  /// Wraps an in-memory raster as a single-level pyramid with virtual tiles.
  static PyramidImage from_raster(Raster r, int tile_size = kDefaultTileSize) {
    PyramidImage img;
    img.channels_ = r.channels();
    img.levels_.push_back({r.width(), r.height(), tile_size, tile_size});
    img.memory_ = std::make_shared<const Raster>(std::move(r));
    return img;
  }

  long long width() const noexcept { return levels_.empty() ? 0 : levels_[0].width; }
  long long height() const noexcept { return levels_.empty() ? 0 : levels_[0].height; }
  int channels() const noexcept { return channels_; }
  int num_levels() const noexcept { return static_cast<int>(levels_.size()); }
  const LevelDescriptor& level(int k) const { return levels_.at(static_cast<std::size_t>(k)); }
  const std::vector<LevelDescriptor>& levels() const noexcept { return levels_; }
  bool in_memory() const noexcept { return memory_ != nullptr; }
  const Raster* memory_raster() const noexcept { return memory_.get(); }

  /// Decodes tile `index` of level `k` (row-major tile order).
  void read_tile(int k, std::size_t index, TrackedVector<std::uint8_t>& out) const {
    if (!tiff_) throw_argument("read_tile on an in-memory image");
    tiff::read_block(tiff_->file, tiff_->ifds[static_cast<std::size_t>(k)], index, out);
  }

  friend PyramidImage load_image(const std::string& path);

 private:
  struct TiffBacking {
    tiff::File file;
    std::vector<tiff::Ifd> ifds;
  };

  int channels_ = 0;
  std::vector<LevelDescriptor> levels_;
  std::shared_ptr<const TiffBacking> tiff_;
  std::shared_ptr<const Raster> memory_;
};

/// Checks the halving law against level 0 for every level.
inline void validate_pyramid_chain(const std::vector<LevelDescriptor>& levels) {
  if (levels.empty()) throw_io("image has no levels");
  for (std::size_t k = 1; k < levels.size(); ++k) {
    const long long ew = halved_dim(levels[0].width, static_cast<int>(k));
    const long long eh = halved_dim(levels[0].height, static_cast<int>(k));
    if (levels[k].width != ew || levels[k].height != eh) {
      throw_io("non-halving pyramid: level " + std::to_string(k) + " is " + std::to_string(levels[k].width) + "x" +
               std::to_string(levels[k].height) + ", expected " + std::to_string(ew) + "x" + std::to_string(eh));
    }
  }
}

inline bool has_suffix_ci(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])) != suffix[i]) return false;
  }
  return true;
}

/// Opens a pyramidal TIFF (chained IFDs, descending resolution) or a PNG.
inline PyramidImage load_image(const std::string& path) {
  {
    tiff::File probe(path, O_RDONLY);
    unsigned char sig[8] = {};
    if (probe.size() >= 8) probe.read_at(0, sig, 8);
    const bool is_png = sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G';
    if (is_png || has_suffix_ci(path, ".png")) return PyramidImage::from_raster(png::read(path));
  }
  auto backing = std::make_shared<PyramidImage::TiffBacking>();
  backing->file = tiff::File(path, O_RDONLY);
  backing->ifds = tiff::read_ifds(backing->file);

  PyramidImage img;
  img.channels_ = static_cast<int>(backing->ifds[0].samples);
  for (std::size_t k = 0; k < backing->ifds.size(); ++k) {
    const tiff::Ifd& d = backing->ifds[k];
    if (static_cast<int>(d.samples) != img.channels_) {
      throw_io("pyramid level " + std::to_string(k) + " of '" + path + "' has " + std::to_string(d.samples) +
               " channels, level 0 has " + std::to_string(img.channels_));
    }
    img.levels_.push_back({d.width, d.height, static_cast<int>(d.block_width), static_cast<int>(d.block_height)});
  }
  validate_pyramid_chain(img.levels_);
  img.tiff_ = std::move(backing);
  return img;
}

/// Returns the w x h window at (x, y) of level `k`. Pixels outside the level
/// are `fill`. Only tiles intersecting the window are decoded.
inline Raster read_region(const PyramidImage& img, int k, long long x, long long y, int w, int h,
                          std::uint8_t fill = kWhite, TileCache* cache = nullptr, RegionStats* stats = nullptr) {
  if (k < 0 || k >= img.num_levels()) throw_argument("read_region: level " + std::to_string(k) + " does not exist");
  if (w <= 0 || h <= 0) throw_argument("read_region: empty request");
  const LevelDescriptor& L = img.level(k);
  const int ch = img.channels();
  Raster out(w, h, ch, fill);
  const Rect want{x, y, w, h};
  const Rect hit = want.intersect(Rect{0, 0, L.width, L.height});
  if (hit.empty()) return out;

  if (const Raster* mem = img.memory_raster()) {
    out.blit(*mem, static_cast<int>(hit.x), static_cast<int>(hit.y), static_cast<int>(hit.w), static_cast<int>(hit.h),
             static_cast<int>(hit.x - x), static_cast<int>(hit.y - y));
    if (stats) {
      stats->tiles_read += static_cast<std::size_t>(((hit.x + hit.w - 1) / L.tile_width - hit.x / L.tile_width + 1) *
                                                    ((hit.y + hit.h - 1) / L.tile_height - hit.y / L.tile_height + 1));
    }
    return out;
  }

  const long long tx0 = hit.x / L.tile_width, tx1 = (hit.x + hit.w - 1) / L.tile_width;
  const long long ty0 = hit.y / L.tile_height, ty1 = (hit.y + hit.h - 1) / L.tile_height;
  TrackedVector<std::uint8_t> local;
  for (long long ty = ty0; ty <= ty1; ++ty) {
    for (long long tx = tx0; tx <= tx1; ++tx) {
      const auto index = static_cast<std::size_t>(ty * L.tiles_across() + tx);
      const TrackedVector<std::uint8_t>* tile = cache ? cache->find(k, index) : nullptr;
      if (!tile) {
        TrackedVector<std::uint8_t> buf;
        img.read_tile(k, index, buf);
        if (cache) {
          tile = &cache->insert(k, index, std::move(buf));
        } else {
          local = std::move(buf);
          tile = &local;
        }
      }
      if (stats) ++stats->tiles_read;
      const Rect trect{tx * L.tile_width, ty * L.tile_height, L.tile_width, L.tile_height};
      const Rect part = trect.intersect(hit);
      const std::size_t tile_row = static_cast<std::size_t>(L.tile_width) * ch;
      for (long long r = 0; r < part.h; ++r) {
        const std::uint8_t* src = tile->data() + static_cast<std::size_t>(part.y - trect.y + r) * tile_row +
                                  static_cast<std::size_t>(part.x - trect.x) * ch;
        std::uint8_t* dst = out.row(static_cast<int>(part.y - y + r)) + static_cast<std::size_t>(part.x - x) * ch;
        std::memcpy(dst, src, static_cast<std::size_t>(part.w) * ch);
      }
    }
  }
  return out;
}

/// Reads a whole level. Convenience for small levels.
inline Raster read_level(const PyramidImage& img, int k) {
  const LevelDescriptor& L = img.level(k);
  return read_region(img, k, 0, 0, static_cast<int>(L.width), static_cast<int>(L.height));
}

/// 2x2 box mean with round-half-up; edge blocks average the samples present.
inline Raster downsample_box2(const Raster& in) {
  const int ow = (in.width() + 1) / 2, oh = (in.height() + 1) / 2, ch = in.channels();
  Raster out(ow, oh, ch);
  for (int y = 0; y < oh; ++y) {
    const int y0 = 2 * y, y1 = std::min(2 * y + 1, in.height() - 1);
    const int ny = y1 - y0 + 1;
    for (int x = 0; x < ow; ++x) {
      const int x0 = 2 * x, x1 = std::min(2 * x + 1, in.width() - 1);
      const int n = ny * (x1 - x0 + 1);
      for (int c = 0; c < ch; ++c) {
        int sum = in.at(x0, y0, c);
        if (x1 != x0) sum += in.at(x1, y0, c);
        if (y1 != y0) {
          sum += in.at(x0, y1, c);
          if (x1 != x0) sum += in.at(x1, y1, c);
        }
        out.at(x, y, c) = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
    }
  }
  return out;
}

/// Statistics returned by the pyramid writer.
struct WriteStats {
  std::size_t tiles_written = 0;
  std::uint64_t bytes_written = 0;
};

/// Streaming pyramid writer. Level-0 tiles are pushed in row-major order;
/// coarser levels are derived on the fly by 2x2 box means, holding one
/// half-filled tile row per derived level.
class PyramidTiffWriter {
 public:
  PyramidTiffWriter(const std::string& path, long long width, long long height, int channels, int tile_size,
                    int num_levels) {
    if (num_levels < 1) throw_argument("pyramid must have at least one level");
    if (tile_size < 16 || tile_size > 4096 || tile_size % 16 != 0) {
      throw_argument("tile size must be a multiple of 16 in [16, 4096], got " + std::to_string(tile_size));
    }
    if (width <= 0 || height <= 0) throw_argument("pyramid dimensions must be positive");
    if (channels != 1 && channels != 3) throw_argument("pyramid channels must be 1 or 3");
    tile_ = tile_size;
    channels_ = channels;
    std::vector<tiff::LevelLayout> layouts;
    for (int k = 0; k < num_levels; ++k) {
      Level lv;
      lv.width = halved_dim(width, k);
      lv.height = halved_dim(height, k);
      lv.across = (lv.width + tile_ - 1) / tile_;
      lv.down = (lv.height + tile_ - 1) / tile_;
      if (k > 0) lv.accum.reset(static_cast<int>(lv.width), tile_, channels_, 0);
      layouts.push_back({static_cast<std::uint32_t>(lv.width), static_cast<std::uint32_t>(lv.height),
                         static_cast<std::uint32_t>(tile_)});
      levels_.push_back(std::move(lv));
    }
    writer_ = std::make_unique<tiff::TiledWriter>(path, std::move(layouts), channels);
    padded_.reset(tile_, tile_, channels_, 0);
  }

  int tile_size() const noexcept { return tile_; }
  long long width() const noexcept { return levels_[0].width; }
  long long height() const noexcept { return levels_[0].height; }
  long long tiles_across() const noexcept { return levels_[0].across; }
  long long tiles_down() const noexcept { return levels_[0].down; }

  /// Expected shape of the next level-0 tile.
  Rect next_tile_rect() const {
    const Level& L = levels_[0];
    const long long tx = next_ % L.across, ty = next_ / L.across;
    return {tx * tile_, ty * tile_, std::min<long long>(tile_, L.width - tx * tile_),
            std::min<long long>(tile_, L.height - ty * tile_)};
  }
  bool complete() const noexcept { return next_ == levels_[0].across * levels_[0].down; }

  void push(const Raster& tile) {
    if (complete()) throw_argument("pyramid writer received more tiles than declared");
    const Rect r = next_tile_rect();
    if (tile.width() != r.w || tile.height() != r.h || tile.channels() != channels_) {
      throw_io("tile source returned " + std::to_string(tile.width()) + "x" + std::to_string(tile.height()) +
               " for tile " + std::to_string(next_) + ", expected " + std::to_string(r.w) + "x" + std::to_string(r.h));
    }
    emit(0, next_ % levels_[0].across, next_ / levels_[0].across, tile);
    ++next_;
  }

  WriteStats finish() {
    if (!complete()) {
      throw_io("tile source ended after " + std::to_string(next_) + " of " +
               std::to_string(levels_[0].across * levels_[0].down) + " tiles");
    }
    writer_->finish();
    return {tiles_, writer_->bytes_written()};
  }

 private:
  struct Level {
    long long width = 0, height = 0, across = 0, down = 0;
    Raster accum;  // one tile row of this level, filled from the finer level
  };

  void emit(std::size_t k, long long tx, long long ty, const Raster& tile) {
    const Level& L = levels_[k];
    const std::size_t index = static_cast<std::size_t>(ty * L.across + tx);
    if (tile.width() == tile_ && tile.height() == tile_) {
      writer_->write_tile(k, index, tile.bytes());
    } else {
      std::fill(padded_.data(), padded_.data() + padded_.size_bytes(), std::uint8_t{0});
      padded_.blit(tile, 0, 0, tile.width(), tile.height(), 0, 0);
      writer_->write_tile(k, index, padded_.bytes());
    }
    ++tiles_;
    if (k + 1 >= levels_.size()) return;

    Level& up = levels_[k + 1];
    Raster half = downsample_box2(tile);
    const int dx = static_cast<int>(tx * tile_ / 2);
    const int dy = static_cast<int>((ty % 2) * tile_ / 2);
    up.accum.blit(half, 0, 0, half.width(), half.height(), dx, dy);
    const bool row_done = tx == L.across - 1;
    const bool pair_done = (ty % 2 == 1) || ty == L.down - 1;
    if (!(row_done && pair_done)) return;

    const long long uty = ty / 2;
    const int rows = static_cast<int>(std::min<long long>(tile_, up.height - uty * tile_));
    for (long long utx = 0; utx < up.across; ++utx) {
      const int cols = static_cast<int>(std::min<long long>(tile_, up.width - utx * tile_));
      Raster t = up.accum.crop(static_cast<int>(utx * tile_), 0, cols, rows);
      emit(k + 1, utx, uty, t);
    }
  }

  int tile_ = kDefaultTileSize;
  int channels_ = 1;
  long long next_ = 0;
  std::size_t tiles_ = 0;
  std::vector<Level> levels_;
  Raster padded_;
  std::unique_ptr<tiff::TiledWriter> writer_;
};

/// Level-0 tile producer for save_pyramid_tiff.
struct TileSource {
  long long width = 0;
  long long height = 0;
  int channels = 1;
  std::function<Raster(const Rect&)> tile;
};

/// Writes a pyramidal tiled TIFF, pulling level-0 tiles from `source` in
/// row-major order.
inline WriteStats save_pyramid_tiff(const TileSource& source, const std::string& path, int tile_size, int num_levels) {
  PyramidTiffWriter w(path, source.width, source.height, source.channels, tile_size, num_levels);
  while (!w.complete()) w.push(source.tile(w.next_tile_rect()));
  return w.finish();
}

/// Tile source over an in-memory raster.
inline TileSource raster_source(const Raster& r) {
  return {r.width(), r.height(), r.channels(), [&r](const Rect& q) {
            return r.crop(static_cast<int>(q.x), static_cast<int>(q.y), static_cast<int>(q.w), static_cast<int>(q.h));
          }};
}

/// Largest level count such that the coarsest level still has a side >= min_side.
inline int auto_num_levels(long long width, long long height, int min_side = 256) {
  int n = 1;
  while (std::max(halved_dim(width, n), halved_dim(height, n)) >= min_side && n < 16) ++n;
  return n;
}

/// Pads both rasters at the bottom/right to their common bounding shape.
inline std::pair<Raster, Raster> pad_to_common(const Raster& a, const Raster& b, std::uint8_t fill) {
  if (a.channels() != b.channels()) throw_argument("pad_to_common: channel counts differ");
  const int w = std::max(a.width(), b.width()), h = std::max(a.height(), b.height());
  auto pad = [&](const Raster& r) {
    if (r.width() == w && r.height() == h) return r;
    Raster out(w, h, r.channels(), fill);
    out.blit(r, 0, 0, r.width(), r.height(), 0, 0);
    return out;
  };
  return {pad(a), pad(b)};
}

namespace detail {

/// Sparse 1-D resampling kernel: output i = sum_k weight[k] * in[first + k].
struct Taps {
  int first = 0;
  std::vector<double> weight;
};

/// Linear taps: output i samples input coordinate i / f + offset (clamped).
inline std::vector<Taps> linear_taps(int in_n, int out_n, double f, double offset) {
  std::vector<Taps> taps(static_cast<std::size_t>(out_n));
  for (int i = 0; i < out_n; ++i) {
    const double s = std::clamp(i / f + offset, 0.0, static_cast<double>(in_n - 1));
    const int j = static_cast<int>(std::floor(s));
    const double t = s - j;
    if (j >= in_n - 1 || t == 0.0) {
      taps[static_cast<std::size_t>(i)] = {std::min(j, in_n - 1), {1.0}};
    } else {
      taps[static_cast<std::size_t>(i)] = {j, {1.0 - t, t}};
    }
  }
  return taps;
}

/// Area taps: output i averages the input over a box of width 1 / f centered
/// at i / f + offset. Input pixel j covers [j - 0.5, j + 0.5); the box is
/// clipped to the image and the weights renormalized.
inline std::vector<Taps> area_taps(int in_n, int out_n, double f, double offset) {
  std::vector<Taps> taps(static_cast<std::size_t>(out_n));
  for (int i = 0; i < out_n; ++i) {
    const double c = i / f + offset;
    const double a = std::max(c - 0.5 / f, -0.5), b = std::min(c + 0.5 / f, in_n - 0.5);
    Taps t;
    if (b <= a) {
      t = {std::clamp(static_cast<int>(std::lround(c)), 0, in_n - 1), {1.0}};
    } else {
      const int j0 = std::clamp(static_cast<int>(std::floor(a + 0.5)), 0, in_n - 1);
      const int j1 = std::clamp(static_cast<int>(std::ceil(b - 0.5)), j0, in_n - 1);
      t.first = j0;
      double total = 0;
      for (int j = j0; j <= j1; ++j) {
        const double w = std::max(0.0, std::min(b, j + 0.5) - std::max(a, j - 0.5));
        t.weight.push_back(w);
        total += w;
      }
      if (total <= 0) {
        t.weight.assign(1, 1.0);
        total = 1.0;
      }
      for (double& w : t.weight) w /= total;
    }
    taps[static_cast<std::size_t>(i)] = std::move(t);
  }
  return taps;
}

}  // namespace detail

/// Output dimension for a resampling factor.
inline int resampled_dim(long long n, double factor) { return static_cast<int>(std::llround(n * factor)); }

/// Resamples by `factor`: bilinear above 0.5, box (area) average at or below.
/// Output pixel i sits at input coordinate i / factor + offset, so with the
/// default offset pixel 0 stays anchored at the origin.
inline Raster resample(const Raster& r, double factor, double offset = 0.0) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw_argument("resample: factor must be positive");
  const int ow = resampled_dim(r.width(), factor), oh = resampled_dim(r.height(), factor);
  if (ow < 1 || oh < 1) {
    throw_argument("resample: degenerate output size " + std::to_string(ow) + "x" + std::to_string(oh));
  }
  if (factor == 1.0 && offset == 0.0) return r;
  const bool area = factor <= 0.5;
  const auto tx = area ? detail::area_taps(r.width(), ow, factor, offset)
                       : detail::linear_taps(r.width(), ow, factor, offset);
  const auto ty = area ? detail::area_taps(r.height(), oh, factor, offset)
                       : detail::linear_taps(r.height(), oh, factor, offset);
  const int ch = r.channels();
  Raster out(ow, oh, ch);
  std::vector<double> acc(static_cast<std::size_t>(r.width()) * ch);
  for (int y = 0; y < oh; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const detail::Taps& vy = ty[static_cast<std::size_t>(y)];
    for (std::size_t k = 0; k < vy.weight.size(); ++k) {
      const std::uint8_t* src = r.row(vy.first + static_cast<int>(k));
      const double w = vy.weight[k];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * src[i];
    }
    std::uint8_t* dst = out.row(y);
    for (int x = 0; x < ow; ++x) {
      const detail::Taps& hx = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < ch; ++c) {
        double v = 0;
        for (std::size_t k = 0; k < hx.weight.size(); ++k) {
          v += hx.weight[k] * acc[static_cast<std::size_t>(hx.first + static_cast<int>(k)) * ch + c];
        }
        dst[x * ch + c] = to_u8(v);
      }
    }
  }
  return out;
}

}  // namespace wsireg
