#pragma once

// 8-bit grayscale PNG reading and writing over libpng. Any PNG colour type
// is reduced to 8-bit gray on read.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "convmcd/error.hpp"
#include "convmcd/raster.hpp"

namespace convmcd {

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}
inline void png_warning_handler(png_structp, png_const_charp) {}
}  // namespace detail

inline ImageGrid<std::uint8_t> read_png_gray(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FormatError(path + ": cannot open");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path + ": not a PNG file");
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, detail::png_error_handler,
                                           detail::png_warning_handler);
  if (!png) throw FormatError(path + ": libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": " + (message.empty() ? "malformed PNG" : message));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 1 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": could not reduce to 8-bit grayscale");
  }
  pixels.resize(static_cast<std::size_t>(width) * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return ImageGrid<std::uint8_t>(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

inline void write_png_gray(const std::string& path, const ImageGrid<std::uint8_t>& image) {
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(path + ": cannot open for writing");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, detail::png_error_handler,
                                            detail::png_warning_handler);
  if (!png) throw Error(path + ": libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(path + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto values = image.values();
  for (int r = 0; r < image.height(); ++r) {
    rows[r] = const_cast<png_bytep>(values.data() + static_cast<std::size_t>(r) * image.width());
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Pixels strictly above 127 are foreground.
inline BinaryMask read_mask_png(const std::string& path) {
  const auto gray = read_png_gray(path);
  BinaryMask m(gray.width(), gray.height());
  for (std::size_t i = 0; i < gray.size(); ++i) m.set(i, gray[i] > 127);
  return m;
}

/// Foreground written as 255, background as 0.
inline void write_mask_png(const std::string& path, const BinaryMask& mask) {
  ImageGrid<std::uint8_t> out(mask.width(), mask.height());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 255 : 0;
  write_png_gray(path, out);
}

}  // namespace convmcd
