#pragma once

#include <vector>

#include "marsnet/raster/optical.hpp"
#include "marsnet/raster/resample.hpp"
#include "marsnet/raster/sar.hpp"
#include "marsnet/raster/stack.hpp"
#include "marsnet/raster/terrain.hpp"

namespace marsnet::raster {

/// Per-modality source rasters as delivered by the upstream archives.
struct StackSources {
  std::vector<Raster> optical;  // 12-band reflectance per scene
  std::vector<Raster> sar_c;    // (VV, VH) dB per scene
  Raster palsar_dn;             // (HH, HV) digital numbers
  Raster incidence;             // local incidence angle, degrees
  Raster dem;                   // elevation, metres
};

struct BuildOptions {
  double speckle_radius_m = 50.0;  // 0 disables the focal mean on Sentinel-1 scenes
};

inline Raster on_grid(const Raster& r, const GridGeometry& target) {
  return r.geometry() == target ? r : resample_bicubic(r, target);
}

/// Resamples every source onto `target` (bicubic, skipped when already on
/// it), derives the per-modality bands and assembles the 34-band stack set.
/// Sentinel-1 scenes are speckle-filtered before the temporal percentiles.
inline StackSet build_stacks(const StackSources& src, const GridGeometry& target, const BuildOptions& opt = {}) {
  target.validate();
  require(!src.optical.empty(), "build_stacks: no optical scenes");
  require(!src.sar_c.empty(), "build_stacks: no Sentinel-1 scenes");
  std::vector<Raster> optical, sar;
  for (const auto& r : src.optical) optical.push_back(on_grid(r, target));
  for (const auto& r : src.sar_c) {
    require(r.bands() == 2, "build_stacks: Sentinel-1 scenes need 2 bands (VV, VH)");
    Raster s = on_grid(r, target);
    sar.push_back(opt.speckle_radius_m > 0 ? speckle_filter(s, opt.speckle_radius_m) : std::move(s));
  }
  // PALSAR goes to dB before resampling so the interpolation runs in the same
  // domain as the Sentinel-1 bands.
  require(src.palsar_dn.bands() == 2, "build_stacks: PALSAR-2 needs 2 DN bands (HH, HV)");
  const Raster palsar_db = on_grid(with_ratio_band(dn_to_gamma0(src.palsar_dn)), target);
  const Raster lia = on_grid(src.incidence, target);
  const Raster palsar = stack_bands({&palsar_db, &lia});
  require(src.dem.bands() == 1, "build_stacks: DEM must have one band");
  const Raster dem = on_grid(src.dem, target);
  return assemble_stacks(optical_composite(optical), sentinel1_percentile_stack(sar), palsar, ancillary_stack(dem));
}

}  // namespace marsnet::raster
