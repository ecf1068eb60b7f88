#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "marsnet/eval/metrics.hpp"
#include "marsnet/gedi/rasterize.hpp"

namespace marsnet::eval {

struct FootprintEvaluation {
  MetricsReport report;
  std::vector<double> observed;
  std::vector<double> predicted;
  std::vector<std::string> used_ids;
  std::size_t excluded_nodata = 0;  // disks with no valid predicted pixel
};

/// Mean of the valid map pixels whose centroids lie within the footprint disk.
/// Returns false when every such pixel is nodata. Footprints whose centre
/// falls outside the map are a bad-input error.
inline bool disk_mean(const raster::Raster& map, const gedi::LabeledPoint& pt, double diameter_m, double& mean) {
  const auto& g = map.geometry();
  const auto xy = geo::to_utm({pt.lon, pt.lat}, g.crs);
  int col = 0, row = 0;
  if (!g.locate(xy.x, xy.y, col, row)) fail_input("footprint " + pt.id + " lies outside the prediction map");
  const double radius = diameter_m / 2.0, r2 = radius * radius;
  const int c0 = std::max(0, static_cast<int>(std::floor(g.col_of(xy.x - radius))));
  const int c1 = std::min(g.width - 1, static_cast<int>(std::ceil(g.col_of(xy.x + radius))));
  const int r0 = std::max(0, static_cast<int>(std::floor(g.row_of(xy.y + radius))));
  const int r1 = std::min(g.height - 1, static_cast<int>(std::ceil(g.row_of(xy.y - radius))));
  double sum = 0;
  std::size_t n = 0;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dx = g.centroid_x(c) - xy.x, dy = g.centroid_y(r) - xy.y;
      if (dx * dx + dy * dy > r2 || map.is_nodata(r, c)) continue;
      sum += map.at(0, r, c);
      ++n;
    }
  if (!n) return false;
  mean = sum / static_cast<double>(n);
  return true;
}

/// Footprint-level accuracy: each footprint's calibrated height against the
/// mean predicted height over its disk.
inline FootprintEvaluation footprint_eval(const raster::Raster& map, const std::vector<gedi::LabeledPoint>& footprints,
                                          double diameter_m = 25.0) {
  require(diameter_m > 0, "footprint diameter must be positive");
  require(map.bands() == 1, "prediction map must have one band");
  FootprintEvaluation out;
  for (const auto& fp : footprints) {
    double m = 0;
    if (!disk_mean(map, fp, diameter_m, m)) {
      ++out.excluded_nodata;
      continue;
    }
    out.observed.push_back(fp.height);
    out.predicted.push_back(m);
    out.used_ids.push_back(fp.id);
  }
  if (out.observed.empty()) fail_input("no valid footprints");
  out.report = metrics(out.observed, out.predicted);
  return out;
}

}  // namespace marsnet::eval
