#pragma once

// Filter lookups backed by rasters: a footprint reads the pixel containing
// its projected centre.

#include "marsnet/gedi/footprint.hpp"
#include "marsnet/geo/projection.hpp"
#include "marsnet/raster/grid.hpp"

namespace marsnet::gedi {

/// Band 0 at the footprint's pixel; NaN outside the grid or on nodata. The
/// raster must outlive the lookup.
inline NdviLookup raster_ndvi_lookup(const raster::Raster& r) {
  return [&r](double lon, double lat) {
    const auto xy = geo::to_utm({lon, lat}, r.geometry().crs);
    int col = 0, row = 0;
    if (!r.geometry().locate(xy.x, xy.y, col, row) || r.is_nodata(row, col)) return nodata_value();
    return r.at(0, row, col);
  };
}

/// True where the footprint's pixel is valid and non-zero.
inline MaskLookup raster_mask_lookup(const raster::Raster& r) {
  return [&r](double lon, double lat) {
    const auto xy = geo::to_utm({lon, lat}, r.geometry().crs);
    int col = 0, row = 0;
    return r.geometry().locate(xy.x, xy.y, col, row) && !r.is_nodata(row, col) && r.at(0, row, col) != 0.0;
  };
}

}  // namespace marsnet::gedi
