#pragma once

/// @file png.hpp
/// PNG ingestion and QC output through libpng's simplified API.

#include <png.h>

#include <string>

#include "wsireg/error.hpp"
#include "wsireg/raster.hpp"

namespace wsireg::png {

inline Raster read(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw_io("cannot read PNG '" + path + "': " + img.message);
  }
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw_io("unsupported sample format: 16-bit PNG '" + path + "'");
  }
  if (img.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&img);
    throw_io("unsupported sample format: PNG with alpha channel '" + path + "'");
  }
  const int channels = (img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Raster out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
  if (!png_image_finish_read(&img, nullptr, out.data(), static_cast<png_int_32>(out.row_bytes()), nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw_io("cannot decode PNG '" + path + "': " + msg);
  }
  return out;
}

inline void write(const std::string& path, const Raster& r) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(r.width());
  img.height = static_cast<png_uint_32>(r.height());
  img.format = r.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, r.data(), static_cast<png_int_32>(r.row_bytes()), nullptr)) {
    throw_io("cannot write PNG '" + path + "': " + img.message);
  }
}

}  // namespace wsireg::png
