#pragma once

// Heatmap rendering: one pixel per matrix entry, 8-bit PNG via libpng.

#include <png.h>

#include <array>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/io.hpp"
#include "bayesmg/linalg.hpp"

namespace bayesmg {

enum class Palette { grayscale, diverging };

inline const char* palette_name(Palette p) { return p == Palette::grayscale ? "grayscale" : "diverging"; }

/// Value range mapped onto the palette.
struct HeatmapScale {
  double min = 0.0;
  double max = 0.0;
  Palette palette = Palette::grayscale;
};

namespace detail {

/// Position of v in [min, max] as 0..255; constant input maps to 128.
inline int heat_level(double v, double lo, double hi) {
  if (!(hi > lo)) return 128;
  const double t = (v - lo) / (hi - lo);
  return static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
}

/// Blue -> white -> red.
inline std::array<unsigned char, 3> diverging_color(int level) {
  if (level <= 128) {
    const double t = level / 128.0;
    const auto c = static_cast<unsigned char>(std::lround(255.0 * t));
    return {c, c, 255};
  }
  const double t = (255 - level) / 127.0;
  const auto c = static_cast<unsigned char>(std::lround(255.0 * t));
  return {255, c, c};
}

}  // namespace detail

/// Writes `path` (PNG, width = cols, height = rows) and `path + ".scale.txt"`.
inline HeatmapScale render_heatmap(const Matrix& m, const std::string& path, Palette palette = Palette::grayscale) {
  detail::require_domain(m.size() > 0 && m.allFinite(), "heatmap: matrix must be non-empty and finite");
  HeatmapScale scale{m.minCoeff(), m.maxCoeff(), palette};
  const int channels = palette == Palette::grayscale ? 1 : 3;

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError(path + ": cannot open for writing");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(fp, &std::fclose);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError(path + ": png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError(path + ": png_create_info_struct failed");
  }
  std::vector<unsigned char> rowbuf(static_cast<std::size_t>(m.cols() * channels));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": PNG encoding failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(m.cols()), static_cast<png_uint_32>(m.rows()), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const int level = detail::heat_level(m(i, j), scale.min, scale.max);
      if (channels == 1) {
        rowbuf[static_cast<std::size_t>(j)] = static_cast<unsigned char>(level);
      } else {
        const auto c = detail::diverging_color(level);
        for (int k = 0; k < 3; ++k) rowbuf[static_cast<std::size_t>(j * 3 + k)] = c[static_cast<std::size_t>(k)];
      }
    }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  guard.reset();

  auto side = detail::open_out(path + ".scale.txt");
  side << "min," << detail::format_double(scale.min) << "\nmax," << detail::format_double(scale.max)
       << "\npalette," << palette_name(palette) << '\n';
  if (!side) throw IoError(path + ".scale.txt: write failed");
  return scale;
}

/// Decoded 8-bit PNG (gray or RGB), for checking rendered output.
struct PngPixels {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<unsigned char> data;  // row-major, interleaved channels

  unsigned char at(int row, int col, int ch = 0) const {
    return data[static_cast<std::size_t>((row * width + col) * channels + ch)];
  }
};

inline PngPixels read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError(path + ": cannot open for reading");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(fp, &std::fclose);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError(path + ": png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError(path + ": png_create_info_struct failed");
  }
  PngPixels out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": PNG decoding failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = static_cast<int>(png_get_channels(png, info));
  if (png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": only 8-bit PNG is supported");
  }
  out.data.resize(static_cast<std::size_t>(out.width * out.height * out.channels));
  for (int r = 0; r < out.height; ++r) {
    png_read_row(png, out.data.data() + static_cast<std::size_t>(r * out.width * out.channels), nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace bayesmg
