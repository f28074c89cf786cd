#pragma once

/// @file tiff.hpp
/// Minimal classic (32-bit offset, little-endian) TIFF codec covering what a
/// tiled pyramidal slide needs: chained IFDs, tiled or striped layout, 8-bit
/// chunky samples, no compression or Deflate.
///
/// Reading goes through pread() so one open file can serve concurrent tile
/// reads. Writing is append-only: tile payloads are streamed to disk as they
/// are produced and the IFD chain is emitted once at the end.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "wsireg/error.hpp"
#include "wsireg/memory.hpp"

namespace wsireg::tiff {

enum Tag : std::uint16_t {
  kNewSubfileType = 254,
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kPredictor = 317,
  kTileWidth = 322,
  kTileLength = 323,
  kTileOffsets = 324,
  kTileByteCounts = 325,
  kSampleFormat = 339,
};

enum Compression : std::uint32_t { kNone = 1, kDeflate = 8, kDeflateLegacy = 32946 };

/// RAII POSIX file descriptor.
class File {
 public:
  File() = default;
  File(const std::string& path, int flags, mode_t mode = 0644) : path_(path) {
    fd_ = ::open(path.c_str(), flags | O_CLOEXEC, mode);
    if (fd_ < 0) throw_io("cannot open '" + path + "': " + std::strerror(errno));
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  File(File&& o) noexcept : fd_(o.fd_), path_(std::move(o.path_)) { o.fd_ = -1; }
  File& operator=(File&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      path_ = std::move(o.path_);
      o.fd_ = -1;
    }
    return *this;
  }
  ~File() { close(); }

  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  const std::string& path() const noexcept { return path_; }

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw_io("cannot stat '" + path_ + "'");
    return static_cast<std::uint64_t>(st.st_size);
  }

  void read_at(std::uint64_t offset, void* dst, std::size_t n) const {
    auto* p = static_cast<char*>(dst);
    while (n > 0) {
      ssize_t got = ::pread(fd_, p, n, static_cast<off_t>(offset));
      if (got < 0 && errno == EINTR) continue;
      if (got <= 0) throw_io("short read in '" + path_ + "' at offset " + std::to_string(offset));
      p += got;
      n -= static_cast<std::size_t>(got);
      offset += static_cast<std::uint64_t>(got);
    }
  }

  void write_at(std::uint64_t offset, const void* src, std::size_t n) {
    const auto* p = static_cast<const char*>(src);
    while (n > 0) {
      ssize_t put = ::pwrite(fd_, p, n, static_cast<off_t>(offset));
      if (put < 0 && errno == EINTR) continue;
      if (put <= 0) throw_io("write failed on '" + path_ + "': " + std::strerror(errno));
      p += put;
      n -= static_cast<std::size_t>(put);
      offset += static_cast<std::uint64_t>(put);
    }
  }

 private:
  int fd_ = -1;
  std::string path_;
};

/// One image file directory, reduced to the fields the engine uses. Strips are
/// represented as tiles spanning the full width.
struct Ifd {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t samples = 1;
  std::uint32_t compression = kNone;
  std::uint32_t photometric = 1;
  std::uint32_t block_width = 0;
  std::uint32_t block_height = 0;
  bool tiled = false;
  std::vector<std::uint64_t> offsets;
  std::vector<std::uint64_t> byte_counts;

  std::uint32_t blocks_across() const { return (width + block_width - 1) / block_width; }
  std::uint32_t blocks_down() const { return (height + block_height - 1) / block_height; }
  /// Decoded payload size of block (bx, by); strips are not padded at the bottom.
  std::size_t block_bytes(std::uint32_t by) const {
    std::uint32_t rows = block_height;
    if (!tiled) rows = std::min(block_height, height - by * block_height);
    return static_cast<std::size_t>(block_width) * rows * samples;
  }
};

namespace detail {

inline std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

struct Entry {
  std::uint16_t tag;
  std::uint16_t type;
  std::uint32_t count;
  std::array<unsigned char, 4> raw;
};

inline std::vector<std::uint64_t> entry_values(const File& f, const Entry& e) {
  if (e.type != 3 && e.type != 4 && e.type != 1) {
    throw_io("TIFF tag " + std::to_string(e.tag) + " has unsupported type " + std::to_string(e.type));
  }
  const std::size_t sz = type_size(e.type);
  const std::size_t total = sz * e.count;
  std::vector<unsigned char> buf(total);
  if (total <= 4) {
    std::memcpy(buf.data(), e.raw.data(), total);
  } else {
    f.read_at(le32(e.raw.data()), buf.data(), total);
  }
  std::vector<std::uint64_t> out(e.count);
  for (std::uint32_t i = 0; i < e.count; ++i) {
    const unsigned char* p = buf.data() + i * sz;
    out[i] = sz == 1 ? p[0] : sz == 2 ? le16(p) : le32(p);
  }
  return out;
}

}  // namespace detail

/// Parses the whole IFD chain. Throws Error(io) on anything outside the
/// supported subset.
inline std::vector<Ifd> read_ifds(const File& f) {
  unsigned char hdr[8];
  if (f.size() < 8) throw_io("'" + f.path() + "' is too small to be a TIFF");
  f.read_at(0, hdr, 8);
  if (hdr[0] == 'M' && hdr[1] == 'M') throw_io("big-endian TIFF is not supported: '" + f.path() + "'");
  if (hdr[0] != 'I' || hdr[1] != 'I') throw_io("'" + f.path() + "' is not a TIFF file");
  std::uint16_t magic = detail::le16(hdr + 2);
  if (magic == 43) throw_io("BigTIFF is not supported: '" + f.path() + "'");
  if (magic != 42) throw_io("'" + f.path() + "' has a bad TIFF magic number");

  std::vector<Ifd> ifds;
  std::set<std::uint64_t> seen;
  std::uint64_t next = detail::le32(hdr + 4);
  while (next != 0) {
    if (!seen.insert(next).second) throw_io("TIFF IFD chain loops in '" + f.path() + "'");
    unsigned char cnt[2];
    f.read_at(next, cnt, 2);
    const std::uint16_t n = detail::le16(cnt);
    std::vector<unsigned char> raw(static_cast<std::size_t>(n) * 12 + 4);
    f.read_at(next + 2, raw.data(), raw.size());

    Ifd ifd;
    std::uint32_t planar = 1, predictor = 1, sample_format = 1;
    std::uint32_t rows_per_strip = 0;
    bool have_tile_w = false;
    std::vector<std::uint64_t> tile_off, tile_cnt, strip_off, strip_cnt;
    for (std::uint16_t i = 0; i < n; ++i) {
      const unsigned char* p = raw.data() + i * 12;
      detail::Entry e{detail::le16(p), detail::le16(p + 2), detail::le32(p + 4), {p[8], p[9], p[10], p[11]}};
      auto first = [&] { return detail::entry_values(f, e).at(0); };
      switch (e.tag) {
        case kImageWidth: ifd.width = static_cast<std::uint32_t>(first()); break;
        case kImageLength: ifd.height = static_cast<std::uint32_t>(first()); break;
        case kBitsPerSample: {
          for (auto b : detail::entry_values(f, e)) {
            if (b != 8) throw_io("unsupported sample format: " + std::to_string(b) + "-bit samples in '" + f.path() + "'");
          }
          break;
        }
        case kCompression: ifd.compression = static_cast<std::uint32_t>(first()); break;
        case kPhotometric: ifd.photometric = static_cast<std::uint32_t>(first()); break;
        case kSamplesPerPixel: ifd.samples = static_cast<std::uint32_t>(first()); break;
        case kRowsPerStrip: rows_per_strip = static_cast<std::uint32_t>(first()); break;
        case kPlanarConfig: planar = static_cast<std::uint32_t>(first()); break;
        case kPredictor: predictor = static_cast<std::uint32_t>(first()); break;
        case kSampleFormat: sample_format = static_cast<std::uint32_t>(first()); break;
        case kTileWidth: ifd.block_width = static_cast<std::uint32_t>(first()); have_tile_w = true; break;
        case kTileLength: ifd.block_height = static_cast<std::uint32_t>(first()); break;
        case kTileOffsets: tile_off = detail::entry_values(f, e); break;
        case kTileByteCounts: tile_cnt = detail::entry_values(f, e); break;
        case kStripOffsets: strip_off = detail::entry_values(f, e); break;
        case kStripByteCounts: strip_cnt = detail::entry_values(f, e); break;
        default: break;
      }
    }
    const std::string where = "IFD " + std::to_string(ifds.size()) + " of '" + f.path() + "'";
    if (ifd.width == 0 || ifd.height == 0) throw_io(where + " has no image dimensions");
    if (ifd.samples != 1 && ifd.samples != 3) {
      throw_io("unsupported sample format: " + std::to_string(ifd.samples) + " samples per pixel in " + where);
    }
    if (sample_format != 1) throw_io("unsupported sample format: non-integer samples in " + where);
    if (planar != 1 && ifd.samples > 1) throw_io("planar TIFF layout is not supported in " + where);
    if (predictor != 1) throw_io("TIFF predictors are not supported in " + where);
    if (ifd.compression != kNone && ifd.compression != kDeflate && ifd.compression != kDeflateLegacy) {
      throw_io("unsupported TIFF compression " + std::to_string(ifd.compression) + " in " + where);
    }
    if (ifd.photometric != 1 && ifd.photometric != 2) {
      throw_io("unsupported photometric interpretation " + std::to_string(ifd.photometric) + " in " + where);
    }
    if (have_tile_w) {
      ifd.tiled = true;
      if (ifd.block_width == 0 || ifd.block_height == 0) throw_io(where + " has a zero tile size");
      ifd.offsets = std::move(tile_off);
      ifd.byte_counts = std::move(tile_cnt);
    } else {
      ifd.tiled = false;
      ifd.block_width = ifd.width;
      ifd.block_height = rows_per_strip == 0 ? ifd.height : std::min(rows_per_strip, ifd.height);
      ifd.offsets = std::move(strip_off);
      ifd.byte_counts = std::move(strip_cnt);
    }
    const std::size_t expected = static_cast<std::size_t>(ifd.blocks_across()) * ifd.blocks_down();
    if (ifd.offsets.size() != expected || ifd.byte_counts.size() != expected) {
      throw_io(where + " lists " + std::to_string(ifd.offsets.size()) + " data blocks, expected " +
               std::to_string(expected));
    }
    ifds.push_back(std::move(ifd));
    next = detail::le32(raw.data() + static_cast<std::size_t>(n) * 12);
  }
  if (ifds.empty()) throw_io("'" + f.path() + "' contains no images");
  return ifds;
}

/// Reads and decodes block `index` of `ifd` into `out` (resized to the decoded size).
inline void read_block(const File& f, const Ifd& ifd, std::size_t index, TrackedVector<std::uint8_t>& out) {
  const std::uint32_t by = static_cast<std::uint32_t>(index / ifd.blocks_across());
  const std::size_t want = ifd.block_bytes(by);
  out.resize(want);
  const std::uint64_t n = ifd.byte_counts[index];
  if (ifd.compression == kNone) {
    if (n < want) throw_io("truncated TIFF block " + std::to_string(index) + " in '" + f.path() + "'");
    f.read_at(ifd.offsets[index], out.data(), want);
    return;
  }
  TrackedVector<std::uint8_t> packed(n);
  f.read_at(ifd.offsets[index], packed.data(), n);
  uLongf got = static_cast<uLongf>(want);
  int rc = ::uncompress(out.data(), &got, packed.data(), static_cast<uLong>(n));
  // Encoders may pad; a short but otherwise valid stream is also an error.
  if ((rc != Z_OK && rc != Z_BUF_ERROR) || got != want) {
    throw_io("corrupt Deflate block " + std::to_string(index) + " in '" + f.path() + "'");
  }
}

/// Deflate-compresses one block.
inline std::vector<std::uint8_t> deflate_block(std::span<const std::uint8_t> raw, int level = Z_BEST_SPEED) {
  uLongf cap = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(cap);
  if (::compress2(out.data(), &cap, raw.data(), static_cast<uLong>(raw.size()), level) != Z_OK) {
    throw_io("Deflate compression failed");
  }
  out.resize(cap);
  return out;
}

/// Description of one tiled directory for the writer.
struct LevelLayout {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t tile = 0;
  std::uint32_t tiles() const { return ((width + tile - 1) / tile) * ((height + tile - 1) / tile); }
};

/// Append-only tiled TIFF writer. Tiles of any level may be added in any
/// order; finish() writes one IFD per level in level order.
class TiledWriter {
 public:
  TiledWriter(const std::string& path, std::vector<LevelLayout> levels, int channels)
      : file_(path, O_WRONLY | O_CREAT | O_TRUNC), levels_(std::move(levels)), channels_(channels) {
    const unsigned char hdr[8] = {'I', 'I', 42, 0, 0, 0, 0, 0};
    file_.write_at(0, hdr, 8);
    end_ = 8;
    offsets_.resize(levels_.size());
    counts_.resize(levels_.size());
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      offsets_[i].assign(levels_[i].tiles(), 0);
      counts_[i].assign(levels_[i].tiles(), 0);
    }
  }

  /// Compresses and appends a full (tile x tile) block.
  void write_tile(std::size_t level, std::size_t index, std::span<const std::uint8_t> raw) {
    auto packed = deflate_block(raw);
    if (end_ + packed.size() > 0xFFFFFFFFull) throw_io("output exceeds the 4 GiB classic TIFF limit: '" + file_.path() + "'");
    file_.write_at(end_, packed.data(), packed.size());
    offsets_.at(level).at(index) = static_cast<std::uint32_t>(end_);
    counts_[level][index] = static_cast<std::uint32_t>(packed.size());
    end_ += packed.size();
    end_ += end_ & 1;  // keep word alignment
    bytes_written_ += packed.size();
  }

  void finish() {
    std::uint64_t prev_link = 4;  // header slot holding the first IFD offset
    for (std::size_t lv = 0; lv < levels_.size(); ++lv) {
      for (std::size_t i = 0; i < counts_[lv].size(); ++i) {
        if (counts_[lv][i] == 0) throw_io("tile " + std::to_string(i) + " of level " + std::to_string(lv) + " was never written");
      }
      const std::uint64_t ifd_pos = end_;
      patch32(prev_link, static_cast<std::uint32_t>(ifd_pos));
      prev_link = write_ifd(lv, ifd_pos);
    }
    patch32(prev_link, 0);
  }

  std::uint64_t bytes_written() const noexcept { return bytes_written_; }
  std::uint64_t file_size() const noexcept { return end_; }

 private:
  struct OutEntry {
    std::uint16_t tag, type;
    std::uint32_t count;
    std::vector<std::uint32_t> values;
  };

  void patch32(std::uint64_t at, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    file_.write_at(at, b, 4);
  }

  // Returns the file position of the IFD's next-pointer.
  std::uint64_t write_ifd(std::size_t lv, std::uint64_t pos) {
    const LevelLayout& L = levels_[lv];
    const auto ch = static_cast<std::uint32_t>(channels_);
    std::vector<OutEntry> entries = {
        {kNewSubfileType, 4, 1, {lv == 0 ? 0u : 1u}},
        {kImageWidth, 4, 1, {L.width}},
        {kImageLength, 4, 1, {L.height}},
        {kBitsPerSample, 3, ch, std::vector<std::uint32_t>(ch, 8)},
        {kCompression, 3, 1, {kDeflate}},
        {kPhotometric, 3, 1, {ch == 3 ? 2u : 1u}},
        {kSamplesPerPixel, 3, 1, {ch}},
        {kPlanarConfig, 3, 1, {1}},
        {kTileWidth, 4, 1, {L.tile}},
        {kTileLength, 4, 1, {L.tile}},
        {kTileOffsets, 4, static_cast<std::uint32_t>(offsets_[lv].size()), offsets_[lv]},
        {kTileByteCounts, 4, static_cast<std::uint32_t>(counts_[lv].size()), counts_[lv]},
    };
    const std::uint64_t ifd_size = 2 + entries.size() * 12 + 4;
    std::uint64_t extra = pos + ifd_size;
    std::vector<unsigned char> ifd(ifd_size, 0);
    std::vector<unsigned char> tail;
    ifd[0] = static_cast<unsigned char>(entries.size());
    ifd[1] = static_cast<unsigned char>(entries.size() >> 8);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const OutEntry& e = entries[i];
      unsigned char* p = ifd.data() + 2 + i * 12;
      put16(p, e.tag);
      put16(p + 2, e.type);
      put32(p + 4, e.count);
      const std::size_t sz = e.type == 3 ? 2 : 4;
      std::vector<unsigned char> payload(sz * e.count);
      for (std::size_t k = 0; k < e.values.size(); ++k) {
        if (sz == 2) put16(payload.data() + k * 2, static_cast<std::uint16_t>(e.values[k]));
        else put32(payload.data() + k * 4, e.values[k]);
      }
      if (payload.size() <= 4) {
        std::memcpy(p + 8, payload.data(), payload.size());
      } else {
        put32(p + 8, static_cast<std::uint32_t>(extra + tail.size()));
        tail.insert(tail.end(), payload.begin(), payload.end());
        if (tail.size() & 1) tail.push_back(0);
      }
    }
    if (extra + tail.size() > 0xFFFFFFFFull) throw_io("output exceeds the 4 GiB classic TIFF limit: '" + file_.path() + "'");
    file_.write_at(pos, ifd.data(), ifd.size());
    if (!tail.empty()) file_.write_at(extra, tail.data(), tail.size());
    end_ = extra + tail.size();
    return pos + ifd_size - 4;
  }

  static void put16(unsigned char* p, std::uint16_t v) {
    p[0] = static_cast<unsigned char>(v);
    p[1] = static_cast<unsigned char>(v >> 8);
  }
  static void put32(unsigned char* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
  }

  File file_;
  std::vector<LevelLayout> levels_;
  int channels_;
  std::uint64_t end_ = 0;
  std::uint64_t bytes_written_ = 0;
  std::vector<std::vector<std::uint32_t>> offsets_;
  std::vector<std::vector<std::uint32_t>> counts_;
};

}  // namespace wsireg::tiff
