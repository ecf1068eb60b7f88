#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "marsnet/geo/projection.hpp"
#include "marsnet/raster/grid.hpp"

namespace marsnet::gedi {

/// A footprint reduced to its position and calibrated height.
struct LabeledPoint {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  double height = 0.0;
};

struct LabelRasters {
  raster::Raster label;  // metres, 0 where unlabeled
  raster::Raster mask;   // 1 where labeled
};

/// Burns footprint disks into the grid: a pixel takes a footprint's height
/// when its centroid lies within diameter/2 of the footprint centre. Where
/// disks overlap the nearest centre wins, ties going to the smaller id.
/// Distances are measured in the grid's projected metres.
inline LabelRasters rasterize_labels(const std::vector<LabeledPoint>& points, const raster::GridGeometry& grid,
                                     double footprint_diameter_m = 25.0) {
  require(footprint_diameter_m > 0, "rasterize_labels: footprint diameter must be positive");
  LabelRasters out{raster::Raster(grid, 1, 0.0), raster::Raster(grid, 1, 0.0)};
  const double radius = footprint_diameter_m / 2.0;
  const double r2 = radius * radius;
  std::vector<double> best_d2(grid.pixels(), std::numeric_limits<double>::infinity());
  std::vector<int> owner(grid.pixels(), -1);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& pt = points[k];
    const auto xy = geo::to_utm({pt.lon, pt.lat}, grid.crs);
    const int c0 = static_cast<int>(std::floor(grid.col_of(xy.x - radius)));
    const int c1 = static_cast<int>(std::ceil(grid.col_of(xy.x + radius)));
    const int r0 = static_cast<int>(std::floor(grid.row_of(xy.y + radius)));
    const int r1 = static_cast<int>(std::ceil(grid.row_of(xy.y - radius)));
    for (int row = std::max(0, r0); row <= std::min(grid.height - 1, r1); ++row) {
      for (int col = std::max(0, c0); col <= std::min(grid.width - 1, c1); ++col) {
        const double dx = grid.centroid_x(col) - xy.x;
        const double dy = grid.centroid_y(row) - xy.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r2) continue;
        const std::size_t p = static_cast<std::size_t>(row) * grid.width + col;
        const bool better = d2 < best_d2[p] || (d2 == best_d2[p] && owner[p] >= 0 && pt.id < points[owner[p]].id);
        if (owner[p] < 0 || better) {
          best_d2[p] = d2;
          owner[p] = static_cast<int>(k);
        }
      }
    }
  }
  for (std::size_t p = 0; p < owner.size(); ++p) {
    if (owner[p] < 0) continue;
    out.label.data()[p] = points[owner[p]].height;
    out.mask.data()[p] = 1.0;
  }
  return out;
}

}  // namespace marsnet::gedi
