#pragma once

#include <cmath>
#include <numbers>

#include "marsnet/geo/projection.hpp"
#include "marsnet/raster/grid.hpp"

namespace marsnet::raster {

/// Slope in degrees from a one-band DEM. Central differences inside, one-sided
/// at the edges; a nodata neighbour used by the stencil makes the pixel nodata.
inline Raster slope_from_dem(const Raster& dem) {
  require(dem.bands() == 1, "slope_from_dem: DEM must have exactly one band");
  const auto& g = dem.geometry();
  Raster out(g, 1);
  auto diff = [&](int r0, int c0, int r1, int c1, double steps) {
    if (dem.is_nodata(r0, c0) || dem.is_nodata(r1, c1)) return nodata_value();
    return (dem.at(0, r1, c1) - dem.at(0, r0, c0)) / (steps * g.pixel_size);
  };
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (dem.is_nodata(r, c)) {
        out.set_nodata(r, c);
        continue;
      }
      double dzdx = 0, dzdy = 0;
      if (g.width > 1) {
        const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, g.width - 1);
        dzdx = diff(r, c0, r, c1, c1 - c0);
      }
      if (g.height > 1) {
        const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, g.height - 1);
        dzdy = diff(r0, c, r1, c, r1 - r0);
      }
      out.at(0, r, c) = std::atan(std::hypot(dzdx, dzdy)) * 180.0 / std::numbers::pi;
    }
  }
  out.sync_nodata();
  return out;
}

/// Two bands: longitude and latitude (degrees) of every pixel centroid.
inline Raster coordinate_grids(const GridGeometry& g) {
  Raster out(g, 2);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const auto ll = geo::from_utm({g.centroid_x(c), g.centroid_y(r)}, g.crs);
      out.at(0, r, c) = ll.lon;
      out.at(1, r, c) = ll.lat;
    }
  }
  return out;
}

/// Ancillary block: {elevation, slope, longitude, latitude}.
inline Raster ancillary_stack(const Raster& dem) {
  const Raster slope = slope_from_dem(dem);
  const Raster coords = coordinate_grids(dem.geometry());
  return stack_bands({&dem, &slope, &coords});
}

}  // namespace marsnet::raster
