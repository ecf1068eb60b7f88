#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "marsnet/core/common.hpp"
#include "marsnet/geo/projection.hpp"

namespace marsnet::raster {

/// North-up grid in a projected (UTM) frame. (origin_x, origin_y) is the
/// outer top-left corner; rows grow southwards.
struct GridGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 10.0;
  int width = 0;
  int height = 0;
  geo::UtmZone crs{};

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  double centroid_x(int col) const { return origin_x + (col + 0.5) * pixel_size; }
  double centroid_y(int row) const { return origin_y - (row + 0.5) * pixel_size; }

  /// Continuous pixel coordinates with the first centroid at 0.
  double col_of(double x) const { return (x - origin_x) / pixel_size - 0.5; }
  double row_of(double y) const { return (origin_y - y) / pixel_size - 0.5; }

  bool contains_pixel(int col, int row) const { return col >= 0 && row >= 0 && col < width && row < height; }

  /// Pixel containing a projected point, or false when outside.
  bool locate(double x, double y, int& col, int& row) const {
    const double c = std::floor((x - origin_x) / pixel_size);
    const double r = std::floor((origin_y - y) / pixel_size);
    if (c < 0 || r < 0 || c >= width || r >= height) return false;
    col = static_cast<int>(c);
    row = static_cast<int>(r);
    return true;
  }

  void validate() const {
    require(pixel_size > 0, "grid pixel_size must be positive");
    require(width > 0 && height > 0, "grid must have positive width and height");
  }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Multi-band raster, band-major. A pixel flagged in `nodata` is invalid in
/// every band and its values are NaN.
class Raster {
 public:
  Raster() = default;
  Raster(GridGeometry geometry, int bands, double fill = 0.0)
      : geometry_(geometry), bands_(bands), data_(geometry.pixels() * bands, fill), nodata_(geometry.pixels(), 0) {
    geometry_.validate();
    require(bands > 0, "raster needs at least one band");
  }

  const GridGeometry& geometry() const { return geometry_; }
  int bands() const { return bands_; }
  int width() const { return geometry_.width; }
  int height() const { return geometry_.height; }

  double& at(int band, int row, int col) { return data_[offset(band, row, col)]; }
  double at(int band, int row, int col) const { return data_[offset(band, row, col)]; }

  std::span<double> band(int b) { return {data_.data() + static_cast<std::size_t>(b) * geometry_.pixels(), geometry_.pixels()}; }
  std::span<const double> band(int b) const {
    return {data_.data() + static_cast<std::size_t>(b) * geometry_.pixels(), geometry_.pixels()};
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool is_nodata(int row, int col) const { return nodata_[static_cast<std::size_t>(row) * width() + col] != 0; }
  bool is_nodata(std::size_t pixel) const { return nodata_[pixel] != 0; }
  const std::vector<std::uint8_t>& nodata_mask() const { return nodata_; }

  void set_nodata(int row, int col) { set_nodata(static_cast<std::size_t>(row) * width() + col); }
  void set_nodata(std::size_t pixel) {
    nodata_[pixel] = 1;
    for (int b = 0; b < bands_; ++b) data_[static_cast<std::size_t>(b) * geometry_.pixels() + pixel] = nodata_value();
  }

  /// Re-derives the nodata plane from non-finite band values.
  void sync_nodata() {
    const std::size_t np = geometry_.pixels();
    for (std::size_t p = 0; p < np; ++p) {
      bool bad = nodata_[p] != 0;
      for (int b = 0; b < bands_ && !bad; ++b) bad = !std::isfinite(data_[static_cast<std::size_t>(b) * np + p]);
      if (bad) set_nodata(p);
    }
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : nodata_) n += v == 0;
    return n;
  }

 private:
  std::size_t offset(int band, int row, int col) const {
    return (static_cast<std::size_t>(band) * geometry_.height + row) * geometry_.width + col;
  }

  GridGeometry geometry_{};
  int bands_ = 0;
  std::vector<double> data_;
  std::vector<std::uint8_t> nodata_;
};

/// Copies band `b` of `src` into a new single-band raster.
inline Raster extract_band(const Raster& src, int b) {
  Raster out(src.geometry(), 1);
  auto dst = out.band(0);
  auto from = src.band(b);
  std::copy(from.begin(), from.end(), dst.begin());
  out.sync_nodata();
  return out;
}

/// Concatenates rasters on an identical grid along the band axis.
inline Raster stack_bands(const std::vector<const Raster*>& parts) {
  require(!parts.empty(), "stack_bands: no inputs");
  int total = 0;
  for (const Raster* r : parts) {
    require(r->geometry() == parts.front()->geometry(), "stack_bands: grid mismatch");
    total += r->bands();
  }
  Raster out(parts.front()->geometry(), total);
  int b0 = 0;
  for (const Raster* r : parts) {
    for (int b = 0; b < r->bands(); ++b) {
      auto s = r->band(b);
      std::copy(s.begin(), s.end(), out.band(b0 + b).begin());
    }
    b0 += r->bands();
  }
  out.sync_nodata();
  return out;
}

}  // namespace marsnet::raster
