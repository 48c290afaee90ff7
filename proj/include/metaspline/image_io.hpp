#pragma once

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaspline/image.hpp"

namespace metaspline {
namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void io_fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

inline ImageGrid load_png(std::FILE* f, const std::string& path) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_fail(path, "png info allocation failed");
  }
  std::vector<png_byte> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "corrupt png stream");
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    color_type = PNG_COLOR_TYPE_RGB;
    bit_depth = 8;
  }
  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "unsupported channel layout (expected gray or rgb, no alpha)");
  }
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "unsupported bit depth " + std::to_string(bit_depth));
  }
  png_read_update_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  data.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = data.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageGrid out(static_cast<int>(width), static_cast<int>(height), channels);
  const double denom = bit_depth == 8 ? 255.0 : 65535.0;
  for (png_uint_32 y = 0; y < height; ++y) {
    const png_byte* row = data.data() + y * row_bytes;
    for (png_uint_32 x = 0; x < width; ++x)
      for (int ch = 0; ch < channels; ++ch) {
        double v;
        if (bit_depth == 8) {
          v = row[x * channels + ch];
        } else {
          const std::size_t i = 2 * (x * channels + ch);
          v = 256.0 * row[i] + row[i + 1];  // network byte order
        }
        out.at(static_cast<int>(x), static_cast<int>(y), ch) = v / denom;
      }
  }
  return out;
}

inline int pgm_token(std::FILE* f, const std::string& path) {
  int c = std::fgetc(f);
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = std::fgetc(f);
    } else if (!std::isspace(c)) {
      break;
    }
    c = std::fgetc(f);
  }
  if (c == EOF || !std::isdigit(c)) io_fail(path, "malformed pgm header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = std::fgetc(f);
  }
  return value;
}

inline ImageGrid load_pgm(std::FILE* f, const std::string& path) {
  if (std::fgetc(f) != 'P' || std::fgetc(f) != '5')
    io_fail(path, "not a binary pgm file");
  const int width = pgm_token(f, path);
  const int height = pgm_token(f, path);
  const int maxval = pgm_token(f, path);
  if (maxval <= 0 || maxval > 65535) io_fail(path, "unsupported pgm maxval");
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> data(static_cast<std::size_t>(width) * height * bytes);
  if (std::fread(data.data(), 1, data.size(), f) != data.size())
    io_fail(path, "truncated pgm data");
  ImageGrid out(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * width + x) * bytes;
      const double v =
          bytes == 1 ? data[i] : 256.0 * data[i] + data[i + 1];
      out.at(x, y, 0) = v / maxval;
    }
  return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Reads an 8 or 16 bit PNG (gray, rgb, or palette) or a binary PGM; values
// are normalized to [0, 1]. The format is detected from the file contents.
inline ImageGrid load_image(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) detail::io_fail(path, "cannot open for reading");
  unsigned char sig[8] = {};
  const std::size_t got = std::fread(sig, 1, 8, f.get());
  std::rewind(f.get());
  if (got >= 8 && !png_sig_cmp(sig, 0, 8)) return detail::load_png(f.get(), path);
  if (got >= 2 && sig[0] == 'P' && sig[1] == '5')
    return detail::load_pgm(f.get(), path);
  detail::io_fail(path, "unrecognized image format");
}

// Writes an 8 bit PNG (1 or 3 channels) or binary PGM (1 channel) chosen by
// the file extension; values are clamped to [0, 1] before quantization.
inline void save_image(const ImageGrid& u, const std::string& path) {
  auto quantize = [](double v) -> unsigned char {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<unsigned char>(std::lround(v * 255.0));
  };
  if (detail::ends_with(path, ".pgm")) {
    if (u.channels != 1)
      detail::io_fail(path, "pgm output requires a single channel");
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) detail::io_fail(path, "cannot open for writing");
    std::fprintf(f.get(), "P5\n%d %d\n255\n", u.width, u.height);
    std::vector<unsigned char> row(u.width);
    for (int y = 0; y < u.height; ++y) {
      for (int x = 0; x < u.width; ++x) row[x] = quantize(u.at(x, y, 0));
      if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
        detail::io_fail(path, "short write");
    }
    return;
  }
  if (!detail::ends_with(path, ".png"))
    detail::io_fail(path, "unsupported output extension");
  if (u.channels != 1 && u.channels != 3)
    detail::io_fail(path, "png output requires 1 or 3 channels");
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) detail::io_fail(path, "cannot open for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) detail::io_fail(path, "png writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    detail::io_fail(path, "png info allocation failed");
  }
  std::vector<png_byte> data(static_cast<std::size_t>(u.width) * u.height *
                             u.channels);
  std::vector<png_bytep> rows(u.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    detail::io_fail(path, "png write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, u.width, u.height, 8,
               u.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < u.height; ++y) {
    png_bytep row = data.data() + static_cast<std::size_t>(y) * u.width * u.channels;
    rows[y] = row;
    for (int x = 0; x < u.width; ++x)
      for (int ch = 0; ch < u.channels; ++ch)
        row[x * u.channels + ch] = quantize(u.at(x, y, ch));
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace metaspline
