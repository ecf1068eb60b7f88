#pragma once

// 8-bit RGB PNG output through libpng, plus a bar-chart rendering of a
// two-map height histogram. Requires linking against libpng.

#include <png.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "marsnet/eval/histogram.hpp"

namespace marsnet::io {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255}) : width(w), height(h) {
    pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
  }

  void fill_rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
      for (int x = std::max(0, x0); x < std::min(width, x1); ++x)
        std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
  }
};

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) fail_runtime("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail_runtime("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail_runtime("PNG write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Side-by-side bars per bin, map a in blue and map b in orange, each scaled
/// to its own pixel total so maps of different coverage compare as
/// frequencies.
inline RgbImage render_histogram(const eval::HeightHistogram& h, int width = 800, int height = 400) {
  RgbImage img(width, height);
  const int margin = 20, base = height - margin;
  const std::array<std::uint8_t, 3> blue{31, 119, 180}, orange{255, 127, 14}, axis{0, 0, 0};
  double total_a = 0, total_b = 0;
  for (std::size_t k = 0; k < h.bins(); ++k) {
    total_a += static_cast<double>(h.counts_a[k]);
    total_b += static_cast<double>(h.counts_b[k]);
  }
  double top = 0;
  for (std::size_t k = 0; k < h.bins(); ++k)
    top = std::max({top, h.counts_a[k] / total_a, h.counts_b[k] / total_b});
  const double slot = static_cast<double>(width - 2 * margin) / static_cast<double>(std::max<std::size_t>(1, h.bins()));
  for (std::size_t k = 0; k < h.bins(); ++k) {
    const int x0 = margin + static_cast<int>(k * slot);
    const int mid = margin + static_cast<int>((k + 0.5) * slot);
    const int x1 = margin + static_cast<int>((k + 1) * slot);
    const int ha = static_cast<int>(std::lround((base - margin) * (h.counts_a[k] / total_a) / top));
    const int hb = static_cast<int>(std::lround((base - margin) * (h.counts_b[k] / total_b) / top));
    img.fill_rect(x0, base - ha, std::max(x0 + 1, mid), base, blue);
    img.fill_rect(mid, base - hb, std::max(mid + 1, x1), base, orange);
  }
  img.fill_rect(margin, base, width - margin, base + 1, axis);
  img.fill_rect(margin - 1, margin, margin, base + 1, axis);
  return img;
}

}  // namespace marsnet::io
