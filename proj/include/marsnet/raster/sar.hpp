#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "marsnet/raster/grid.hpp"

namespace marsnet::raster {

/// Calibrated backscatter in dB from a SAR digital number; NaN for dn <= 0.
inline double dn_to_gamma0(double dn) {
  if (!(dn > 0)) return nodata_value();
  return 10.0 * std::log10(dn * dn) - 83.0;
}

/// Applies dn_to_gamma0 to every band. A non-positive DN in any band marks
/// the pixel as nodata.
inline Raster dn_to_gamma0(const Raster& dn) {
  Raster out(dn.geometry(), dn.bands());
  for (std::size_t i = 0; i < dn.data().size(); ++i) out.data()[i] = dn_to_gamma0(dn.data()[i]);
  out.sync_nodata();
  return out;
}

/// Circular focal mean over valid pixels whose centroids lie within radius_m.
inline Raster speckle_filter(const Raster& src, double radius_m) {
  const auto& g = src.geometry();
  require(radius_m >= g.pixel_size, "speckle_filter: radius must be at least one pixel");
  const int reach = static_cast<int>(std::floor(radius_m / g.pixel_size));
  const double r2 = (radius_m / g.pixel_size) * (radius_m / g.pixel_size);
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx)
      if (dx * dx + dy * dy <= r2) offsets.push_back({dy, dx});

  Raster out(g, src.bands());
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      for (int b = 0; b < src.bands(); ++b) {
        double sum = 0;
        int n = 0;
        for (auto [dy, dx] : offsets) {
          const int r = row + dy, c = col + dx;
          if (!g.contains_pixel(c, r) || src.is_nodata(r, c)) continue;
          sum += src.at(b, r, c);
          ++n;
        }
        out.at(b, row, col) = n ? sum / n : nodata_value();
      }
    }
  }
  out.sync_nodata();
  return out;
}

/// Percentile of sorted values with linear interpolation between order
/// statistics: position p/100 * (n - 1).
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), "percentile of an empty set");
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Per-pixel percentiles over a time series. Output bands are ordered band
/// by band: (b0 p_0, b0 p_1, ..., b1 p_0, ...). Pixels with no valid
/// observation become nodata.
inline Raster temporal_percentiles(const std::vector<Raster>& series, const std::vector<double>& levels = {10, 50, 90}) {
  require(!series.empty(), "temporal_percentiles: empty series");
  require(!levels.empty(), "temporal_percentiles: no levels");
  const auto& g = series.front().geometry();
  const int bands = series.front().bands();
  for (const auto& r : series) {
    require(r.geometry() == g, "temporal_percentiles: grid mismatch in series");
    require(r.bands() == bands, "temporal_percentiles: band count mismatch in series");
  }
  const int nl = static_cast<int>(levels.size());
  Raster out(g, bands * nl);
  std::vector<double> obs;
  for (std::size_t p = 0; p < g.pixels(); ++p) {
    for (int b = 0; b < bands; ++b) {
      obs.clear();
      for (const auto& r : series)
        if (!r.is_nodata(p)) obs.push_back(r.band(b)[p]);
      std::sort(obs.begin(), obs.end());
      for (int l = 0; l < nl; ++l) out.band(b * nl + l)[p] = obs.empty() ? nodata_value() : percentile_sorted(obs, levels[l]);
    }
  }
  out.sync_nodata();
  return out;
}

/// Appends the cross/co-polarised ratio plane to a 2-band (co, cross) dB
/// raster. In dB the power ratio cross/co is the difference cross - co.
inline Raster with_ratio_band(const Raster& co_cross_db) {
  require(co_cross_db.bands() == 2, "with_ratio_band: expected 2 bands (co, cross)");
  Raster out(co_cross_db.geometry(), 3);
  for (int b = 0; b < 2; ++b) std::copy(co_cross_db.band(b).begin(), co_cross_db.band(b).end(), out.band(b).begin());
  for (std::size_t p = 0; p < co_cross_db.geometry().pixels(); ++p)
    out.band(2)[p] = co_cross_db.band(1)[p] - co_cross_db.band(0)[p];
  out.sync_nodata();
  return out;
}

/// Sentinel-1 block: each acquisition is a 2-band (VV, VH) dB raster. The
/// result holds {VV, VH, VH/VV} x {p10, p50, p90} = 9 bands.
inline Raster sentinel1_percentile_stack(const std::vector<Raster>& vv_vh_series) {
  std::vector<Raster> with_ratio;
  with_ratio.reserve(vv_vh_series.size());
  for (const auto& r : vv_vh_series) with_ratio.push_back(with_ratio_band(r));
  return temporal_percentiles(with_ratio);
}

/// PALSAR-2 block from (HH, HV) digital numbers and the local incidence
/// angle: {HH, HV, HV/HH, LIA} = 4 bands.
inline Raster palsar_stack(const Raster& hh_hv_dn, const Raster& incidence_deg) {
  require(hh_hv_dn.bands() == 2, "palsar_stack: expected 2 DN bands (HH, HV)");
  require(incidence_deg.bands() == 1, "palsar_stack: expected 1 incidence band");
  require(hh_hv_dn.geometry() == incidence_deg.geometry(), "palsar_stack: grid mismatch");
  const Raster db = with_ratio_band(dn_to_gamma0(hh_hv_dn));
  return stack_bands({&db, &incidence_deg});
}

}  // namespace marsnet::raster
