#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "marsnet/raster/grid.hpp"
#include "marsnet/raster/sar.hpp"

namespace marsnet::raster {

/// Spectral band order expected in each optical acquisition.
inline const std::array<std::string, 12> kOpticalBands{"B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12"};
inline constexpr int kBlue = 1;
inline constexpr int kRed = 3;
inline constexpr int kNir = 7;

/// NaN when the denominator vanishes.
inline double ndvi(double nir, double red) {
  const double den = nir + red;
  return den == 0.0 ? nodata_value() : (nir - red) / den;
}

inline double evi(double nir, double red, double blue) {
  const double den = nir + 6.0 * red - 7.5 * blue + 1.0;
  return den == 0.0 ? nodata_value() : 2.5 * (nir - red) / den;
}

/// 17-band composite: per-band medians of the 12 spectral bands, median
/// NDVI, median EVI, NDVI max, NDVI min and NDVI (max - min). An observation
/// contributes to the indices only where they are defined; a pixel with no
/// usable observation becomes nodata.
inline Raster optical_composite(const std::vector<Raster>& series) {
  require(!series.empty(), "optical_composite: empty series");
  const auto& g = series.front().geometry();
  for (const auto& r : series) {
    require(r.geometry() == g, "optical_composite: grid mismatch in series");
    require(r.bands() == 12, "optical_composite: each acquisition needs 12 spectral bands");
  }
  Raster out(g, 17);
  std::vector<double> v, nd, ev;
  for (std::size_t p = 0; p < g.pixels(); ++p) {
    bool ok = true;
    for (int b = 0; b < 12 && ok; ++b) {
      v.clear();
      for (const auto& r : series)
        if (!r.is_nodata(p)) v.push_back(r.band(b)[p]);
      if (v.empty()) ok = false;
      else {
        std::sort(v.begin(), v.end());
        out.band(b)[p] = percentile_sorted(v, 50);
      }
    }
    nd.clear();
    ev.clear();
    for (const auto& r : series) {
      if (r.is_nodata(p)) continue;
      const double n = ndvi(r.band(kNir)[p], r.band(kRed)[p]);
      const double e = evi(r.band(kNir)[p], r.band(kRed)[p], r.band(kBlue)[p]);
      if (std::isfinite(n)) nd.push_back(n);
      if (std::isfinite(e)) ev.push_back(e);
    }
    if (!ok || nd.empty() || ev.empty()) {
      out.set_nodata(p);
      continue;
    }
    std::sort(nd.begin(), nd.end());
    std::sort(ev.begin(), ev.end());
    out.band(12)[p] = percentile_sorted(nd, 50);
    out.band(13)[p] = percentile_sorted(ev, 50);
    out.band(14)[p] = nd.back();
    out.band(15)[p] = nd.front();
    out.band(16)[p] = nd.back() - nd.front();
  }
  return out;
}

}  // namespace marsnet::raster
