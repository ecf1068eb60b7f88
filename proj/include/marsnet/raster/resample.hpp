#pragma once

#include <array>
#include <cmath>

#include "marsnet/raster/grid.hpp"

namespace marsnet::raster {

/// Catmull-Rom cubic convolution weights for the four taps at offsets
/// -1, 0, 1, 2 from the sample's integer floor, given fractional part t.
inline std::array<double, 4> catmull_rom_weights(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t), 0.5 * (t3 - t2)};
}

/// Bicubic (Catmull-Rom) resampling onto `target` at its pixel centroids.
/// Targets outside the source's outer extent are nodata. Inside it, sample
/// positions are clamped to the centroid hull and support taps are clamped
/// to the edge rows/columns. Any nodata tap makes the output pixel nodata.
inline Raster resample_bicubic(const Raster& src, const GridGeometry& target) {
  target.validate();
  require(src.geometry().crs == target.crs, "resample_bicubic: source and target use different projections");
  const auto& s = src.geometry();
  Raster out(target, src.bands());
  for (int row = 0; row < target.height; ++row) {
    const double y = target.centroid_y(row);
    for (int col = 0; col < target.width; ++col) {
      const double x = target.centroid_x(col);
      if (x < s.origin_x || x > s.origin_x + s.width * s.pixel_size || y > s.origin_y ||
          y < s.origin_y - s.height * s.pixel_size) {
        out.set_nodata(row, col);
        continue;
      }
      const double u = std::clamp(s.col_of(x), 0.0, static_cast<double>(s.width - 1));
      const double v = std::clamp(s.row_of(y), 0.0, static_cast<double>(s.height - 1));
      const int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
      const auto wu = catmull_rom_weights(u - u0);
      const auto wv = catmull_rom_weights(v - v0);
      std::array<int, 4> cols, rows;
      for (int k = 0; k < 4; ++k) {
        cols[k] = std::clamp(u0 - 1 + k, 0, s.width - 1);
        rows[k] = std::clamp(v0 - 1 + k, 0, s.height - 1);
      }
      bool bad = false;
      for (int j = 0; j < 4 && !bad; ++j)
        for (int i = 0; i < 4 && !bad; ++i) bad = src.is_nodata(rows[j], cols[i]);
      if (bad) {
        out.set_nodata(row, col);
        continue;
      }
      for (int b = 0; b < src.bands(); ++b) {
        double acc = 0;
        for (int j = 0; j < 4; ++j) {
          double line = 0;
          for (int i = 0; i < 4; ++i) line += wu[i] * src.at(b, rows[j], cols[i]);
          acc += wv[j] * line;
        }
        out.at(b, row, col) = acc;
      }
    }
  }
  return out;
}

}  // namespace marsnet::raster
