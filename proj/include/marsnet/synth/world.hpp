#pragma once

// Synthetic study area for desk-scale runs of the whole pipeline.
//
// A smooth latent height field h in [min_height, max_height] drives every
// source through fixed responses of the canopy fraction v = (h - min)/(max - min):
//   NDVI            0.3 + 0.6 v
//   red             0.12 - 0.08 v,   nir = red (1 + NDVI)/(1 - NDVI)
//   other S2 bands  base_b + gain_b v (fixed tables below)
//   S1 VV, VH (dB)  -12 + 4 v,  -19 + 5 v
//   PALSAR HH, HV   gamma0 -9 + 3 v, -16 + 5 v, stored as DN = sqrt(10^((g + 83)/10))
//   incidence       34 + 4 * normalized terrain field (degrees)
// Each acquisition adds seeded Gaussian noise and optical scenes carry one
// cloud disk of nodata. PALSAR comes on a 20 m grid and the DEM on a 30 m
// grid, so stack building has to resample them.
//
// Footprints sit on a jittered grid. RH98 = (disk mean height - 7.86)/0.73
// plus noise, so the calibration regression recovers slope 0.73 and
// intercept 7.86. Quality attributes are drawn so that a known subset fails
// each filter rule; the rule a footprint is planted to fail is recorded.

#include <cmath>
#include <string>
#include <vector>

#include "marsnet/gedi/footprint.hpp"
#include "marsnet/gedi/rasterize.hpp"
#include "marsnet/raster/grid.hpp"

namespace marsnet::synth {

struct WorldConfig {
  std::uint64_t seed = 1;
  int size = 256;  // pixels per side on the 10 m analysis grid
  double min_height = 5.0;
  double max_height = 35.0;
  int footprint_spacing = 6;  // pixels between jittered footprint sites
  double rh98_noise_sd = 0.5;
  int plot_count = 60;
  int trees_per_plot = 20;
  int optical_scenes = 4;
  int sar_scenes = 5;
  double forest_fraction = 0.85;
  // Planted violator rates among footprints on forest pixels.
  double quality_fail_rate = 0.08;
  double sensitivity_fail_rate = 0.06;
  double ndvi_fail_rate = 0.05;

  void validate() const {
    require(size >= 128, "synthetic world grid must be at least 128x128, got " + std::to_string(size));
    require(max_height > min_height && min_height > 0, "synthetic heights need 0 < min_height < max_height");
    require(footprint_spacing >= 3, "footprint_spacing must be at least 3 pixels");
    require(rh98_noise_sd >= 0, "rh98_noise_sd must be non-negative");
    require(plot_count >= 2 && trees_per_plot >= 10, "need at least 2 plots of at least 10 trees");
    require(optical_scenes >= 1 && sar_scenes >= 1, "need at least one optical and one SAR scene");
    require(forest_fraction > 0 && forest_fraction <= 1, "forest_fraction must lie in (0, 1]");
    const double rates = quality_fail_rate + sensitivity_fail_rate + ndvi_fail_rate;
    require(quality_fail_rate >= 0 && sensitivity_fail_rate >= 0 && ndvi_fail_rate >= 0 && rates < 0.5,
            "violator rates must be non-negative and sum below 0.5");
  }
};

struct SyntheticWorld {
  raster::GridGeometry grid;
  raster::Raster true_height;  // metres
  raster::Raster forest_mask;  // 1 forest, 0 not
  raster::Raster ndvi;         // noise-free NDVI the filters compare cover against
  std::vector<raster::Raster> optical;  // 12-band reflectance per scene
  std::vector<raster::Raster> sar_c;    // (VV, VH) dB per scene
  raster::Raster palsar_dn;             // (HH, HV), 20 m grid
  raster::Raster incidence;             // degrees, 20 m grid
  raster::Raster dem;                   // metres, 30 m grid
  std::vector<gedi::FootprintRecord> footprints;
  std::vector<gedi::DropReason> planted;  // per footprint, first rule it should fail
  std::vector<gedi::FieldPlot> plots;
};

inline raster::GridGeometry world_grid(int size, double pixel = 10.0) {
  raster::GridGeometry g;
  g.origin_x = 650000.0;
  g.origin_y = 4800000.0;
  g.pixel_size = pixel;
  g.width = g.height = size;
  g.crs = {52, true};
  return g;
}

/// Sum of random Gaussian bumps, rescaled to [0, 1]. `density` bumps per
/// 64x64 pixels; bump widths scale with `scale` pixels.
inline std::vector<double> smooth_field(int w, int h, Rng& rng, double density, double scale) {
  std::vector<double> f(static_cast<std::size_t>(w) * h, 0.0);
  const int bumps = std::max(3, static_cast<int>(density * w * h / 4096.0));
  for (int k = 0; k < bumps; ++k) {
    const double cy = rng.uniform(-0.1 * h, 1.1 * h), cx = rng.uniform(-0.1 * w, 1.1 * w);
    const double sig = rng.uniform(0.5, 1.5) * scale, amp = rng.uniform(-1.0, 1.0);
    const int reach = static_cast<int>(std::ceil(3.5 * sig));
    for (int y = std::max(0, static_cast<int>(cy) - reach); y < std::min(h, static_cast<int>(cy) + reach + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx) - reach); x < std::min(w, static_cast<int>(cx) + reach + 1); ++x)
        f[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * sig * sig));
  }
  const auto [mn, mx] = std::minmax_element(f.begin(), f.end());
  const double lo = *mn, span = *mx > *mn ? *mx - *mn : 1.0;
  for (double& v : f) v = (v - lo) / span;
  return f;
}

// Reflectance base and gain against canopy fraction for B1..B12 (blue, red
// and nir are overwritten by the index-consistent formulas).
inline constexpr std::array<double, 12> kOpticalBase{0.10, 0.08, 0.09, 0.12, 0.14, 0.20, 0.24, 0.25, 0.26, 0.27, 0.22, 0.16};
inline constexpr std::array<double, 12> kOpticalGain{-0.04, -0.05, -0.03, -0.08, -0.02, 0.10, 0.18, 0.30, 0.28, 0.20, -0.06, -0.08};

inline double canopy_fraction(double h, const WorldConfig& c) { return (h - c.min_height) / (c.max_height - c.min_height); }
inline double ndvi_of_fraction(double v) { return 0.3 + 0.6 * v; }

inline double gamma0_to_dn(double g) { return std::sqrt(std::pow(10.0, (g + 83.0) / 10.0)); }

/// Heights inside the disk of `diameter_m` around (x, y), averaged over pixel
/// centroids; NaN when the disk covers no centroid.
inline double disk_height(const raster::Raster& h, double x, double y, double diameter_m = 25.0) {
  const auto& g = h.geometry();
  const double r = diameter_m / 2;
  double sum = 0;
  int n = 0;
  for (int row = std::max(0, static_cast<int>(std::floor(g.row_of(y + r)))); row <= std::min(g.height - 1, static_cast<int>(std::ceil(g.row_of(y - r)))); ++row)
    for (int col = std::max(0, static_cast<int>(std::floor(g.col_of(x - r)))); col <= std::min(g.width - 1, static_cast<int>(std::ceil(g.col_of(x + r)))); ++col) {
      const double dx = g.centroid_x(col) - x, dy = g.centroid_y(row) - y;
      if (dx * dx + dy * dy > r * r) continue;
      sum += h.at(0, row, col);
      ++n;
    }
  return n ? sum / n : nodata_value();
}

inline SyntheticWorld generate_world(const WorldConfig& cfg) {
  cfg.validate();
  SyntheticWorld w;
  const int n = cfg.size;
  w.grid = world_grid(n);
  const auto& g = w.grid;

  // Latent fields.
  {
    Rng rng(derive_seed(cfg.seed, "height"));
    const auto f = smooth_field(n, n, rng, 4.0, 14.0);
    w.true_height = raster::Raster(g, 1);
    for (std::size_t p = 0; p < g.pixels(); ++p) w.true_height.data()[p] = cfg.min_height + (cfg.max_height - cfg.min_height) * f[p];
  }
  {
    Rng rng(derive_seed(cfg.seed, "forest"));
    auto f = smooth_field(n, n, rng, 1.5, 20.0);
    auto sorted = f;
    std::sort(sorted.begin(), sorted.end());
    const double cut = sorted[static_cast<std::size_t>((1.0 - cfg.forest_fraction) * (sorted.size() - 1))];
    w.forest_mask = raster::Raster(g, 1);
    for (std::size_t p = 0; p < g.pixels(); ++p) w.forest_mask.data()[p] = cfg.forest_fraction >= 1.0 || f[p] > cut ? 1.0 : 0.0;
  }
  w.ndvi = raster::Raster(g, 1);
  for (std::size_t p = 0; p < g.pixels(); ++p) w.ndvi.data()[p] = ndvi_of_fraction(canopy_fraction(w.true_height.data()[p], cfg));

  // Sentinel-2 scenes with one cloud disk each.
  for (int s = 0; s < cfg.optical_scenes; ++s) {
    Rng rng(derive_seed(cfg.seed, "optical/" + std::to_string(s)));
    const double season = 1.0 + 0.05 * std::sin(2.0 * 3.141592653589793 * s / cfg.optical_scenes);
    raster::Raster r(g, 12);
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      const double v = canopy_fraction(w.true_height.data()[p], cfg);
      const double nd = ndvi_of_fraction(v);
      for (int b = 0; b < 12; ++b) r.band(b)[p] = season * (kOpticalBase[b] + kOpticalGain[b] * v);
      const double red = 0.12 - 0.08 * v;
      r.band(3)[p] = season * red;
      r.band(7)[p] = season * red * (1 + nd) / (1 - nd);
      r.band(1)[p] = season * (0.08 - 0.05 * v);
      for (int b = 0; b < 12; ++b) r.band(b)[p] = std::max(1e-4, r.band(b)[p] + rng.normal(0.0, 0.004));
    }
    const double cy = rng.uniform(0, n), cx = rng.uniform(0, n), rad = rng.uniform(4, 10);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (std::hypot(y + 0.5 - cy, x + 0.5 - cx) <= rad) r.set_nodata(y, x);
    w.optical.push_back(std::move(r));
  }

  // Sentinel-1 scenes.
  for (int s = 0; s < cfg.sar_scenes; ++s) {
    Rng rng(derive_seed(cfg.seed, "sar_c/" + std::to_string(s)));
    raster::Raster r(g, 2);
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      const double v = canopy_fraction(w.true_height.data()[p], cfg);
      r.band(0)[p] = -12.0 + 4.0 * v + rng.normal(0.0, 0.8);
      r.band(1)[p] = -19.0 + 5.0 * v + rng.normal(0.0, 0.8);
    }
    w.sar_c.push_back(std::move(r));
  }

  // Terrain on a 30 m grid covering the analysis extent.
  const int n30 = static_cast<int>(std::ceil(n * g.pixel_size / 30.0));
  const auto g30 = world_grid(n30, 30.0);
  std::vector<double> terrain;
  {
    Rng rng(derive_seed(cfg.seed, "terrain"));
    terrain = smooth_field(n30, n30, rng, 12.0, 8.0);
    w.dem = raster::Raster(g30, 1);
    for (std::size_t p = 0; p < g30.pixels(); ++p) w.dem.data()[p] = 400.0 + 250.0 * terrain[p] + rng.normal(0.0, 0.5);
  }

  // PALSAR-2 on a 20 m grid; each coarse pixel sees its 2x2 block mean.
  const int n20 = (n + 1) / 2;
  const auto g20 = world_grid(n20, 20.0);
  {
    Rng rng(derive_seed(cfg.seed, "palsar"));
    w.palsar_dn = raster::Raster(g20, 2);
    w.incidence = raster::Raster(g20, 1);
    for (int y = 0; y < n20; ++y)
      for (int x = 0; x < n20; ++x) {
        double hs = 0;
        int k = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            if (2 * y + dy < n && 2 * x + dx < n) {
              hs += w.true_height.at(0, 2 * y + dy, 2 * x + dx);
              ++k;
            }
        const double v = canopy_fraction(hs / k, cfg);
        w.palsar_dn.at(0, y, x) = gamma0_to_dn(-9.0 + 3.0 * v + rng.normal(0.0, 0.6));
        w.palsar_dn.at(1, y, x) = gamma0_to_dn(-16.0 + 5.0 * v + rng.normal(0.0, 0.6));
        const int ty = std::min(n30 - 1, y * 2 / 3), tx = std::min(n30 - 1, x * 2 / 3);
        w.incidence.at(0, y, x) = 34.0 + 4.0 * terrain[static_cast<std::size_t>(ty) * n30 + tx];
      }
  }

  // Footprints.
  Rng rng(derive_seed(cfg.seed, "footprints"));
  const int sp = cfg.footprint_spacing;
  int serial = 0;
  for (int gy = sp / 2; gy < n; gy += sp)
    for (int gx = sp / 2; gx < n; gx += sp) {
      const double x = g.centroid_x(gx) + rng.uniform(-0.3, 0.3) * sp * g.pixel_size;
      const double y = g.centroid_y(gy) + rng.uniform(-0.3, 0.3) * sp * g.pixel_size;
      int col = 0, row = 0;
      if (!g.locate(x, y, col, row)) continue;
      const double hd = disk_height(w.true_height, x, y);
      gedi::FootprintRecord f;
      char id[32];
      std::snprintf(id, sizeof id, "fp%06d", serial++);
      f.id = id;
      const auto ll = geo::from_utm({x, y}, g.crs);
      f.lon = ll.lon;
      f.lat = ll.lat;
      const double rh98 = (hd - 7.86) / 0.73 + rng.normal(0.0, cfg.rh98_noise_sd);
      // Lower levels trail RH98 by fixed fractions of max(RH98, 2 m); rh80/rh98 = q for RH98 >= 2.
      const double q = rng.uniform(0.55, 0.9), c = std::max(rh98, 2.0);
      for (std::size_t i = 0; i < gedi::kRhLevels.size(); ++i) {
        const int lv = gedi::kRhLevels[i];
        const double frac = lv >= 80 ? q + (1 - q) * (lv - 80) / 18.0 : q * (0.6 + 0.4 * (lv - 60) / 20.0);
        f.rh[i] = rh98 - (1 - frac) * c;
      }
      f.rh.back() = rh98;
      f.acquired_month = 1 + static_cast<int>(rng.below(12));
      const double nd = w.ndvi.at(0, row, col);
      f.canopy_cover = std::clamp(nd + rng.normal(0.0, 0.01), 0.0, 1.0);
      f.sensitivity = rng.uniform(0.985, 1.0);
      // Planted violators: draw the rule to break, then break only that one.
      const double u = rng.uniform();
      gedi::DropReason why = gedi::DropReason::none;
      if (u < cfg.quality_fail_rate) {
        why = gedi::DropReason::quality;
        switch (rng.below(4)) {
          case 0: f.quality_ok = false; break;
          case 1: f.degraded = true; break;
          case 2: f.daytime = true; break;
          default: f.beam = gedi::BeamKind::coverage; break;
        }
      } else if (u < cfg.quality_fail_rate + cfg.sensitivity_fail_rate) {
        why = gedi::DropReason::sensitivity;
        // Between the two thresholds only for high cover, well below otherwise.
        f.sensitivity = f.canopy_cover >= 0.8 ? rng.uniform(0.955, 0.975) : rng.uniform(0.85, 0.94);
      } else if (u < cfg.quality_fail_rate + cfg.sensitivity_fail_rate + cfg.ndvi_fail_rate) {
        why = gedi::DropReason::ndvi_consistency;
        const double off = rng.uniform(0.4, 0.5);
        f.canopy_cover = nd > 0.5 ? nd - off : nd + off;
        // The cover shift may move the record across the 0.8 cover boundary.
        f.sensitivity = rng.uniform(0.985, 1.0);
      }
      if (w.forest_mask.at(0, row, col) == 0.0 && why != gedi::DropReason::quality && why != gedi::DropReason::sensitivity)
        why = gedi::DropReason::forest_mask;
      f.validate();
      w.footprints.push_back(f);
      w.planted.push_back(why);
    }

  // Field plots at footprints that should survive every filter. Ten
  // dominant trees average exactly the disk height; the rest are shorter.
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < w.footprints.size(); ++i)
    if (w.planted[i] == gedi::DropReason::none) good.push_back(i);
  require(good.size() >= static_cast<std::size_t>(cfg.plot_count), "synthetic world has too few clean footprints for the plots");
  Rng prng(derive_seed(cfg.seed, "plots"));
  prng.shuffle(good.begin(), good.end());
  good.resize(cfg.plot_count);
  std::sort(good.begin(), good.end());
  for (std::size_t k = 0; k < good.size(); ++k) {
    const auto& f = w.footprints[good[k]];
    const auto xy = geo::to_utm({f.lon, f.lat}, g.crs);
    const double hd = disk_height(w.true_height, xy.x, xy.y);
    gedi::FieldPlot p;
    char id[32];
    std::snprintf(id, sizeof id, "plot%04zu", k);
    p.id = id;
    p.lon = f.lon;
    p.lat = f.lat;
    p.matched_footprint_id = f.id;
    for (int t = 0; t < 10; ++t) p.tree_heights.push_back(hd + 0.2 * (t - 4.5));
    for (int t = 10; t < cfg.trees_per_plot; ++t) p.tree_heights.push_back((hd - 1.0) * prng.uniform(0.4, 0.95));
    w.plots.push_back(std::move(p));
  }
  return w;
}

}  // namespace marsnet::synth
