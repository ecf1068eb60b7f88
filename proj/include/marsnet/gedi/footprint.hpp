#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "marsnet/core/common.hpp"

namespace marsnet::gedi {

/// Relative-height percentile levels carried by every footprint.
inline constexpr std::array<int, 9> kRhLevels{60, 65, 70, 75, 80, 85, 90, 95, 98};

inline int rh_index(int level) {
  for (std::size_t i = 0; i < kRhLevels.size(); ++i)
    if (kRhLevels[i] == level) return static_cast<int>(i);
  fail_input("unsupported RH level " + std::to_string(level));
}

enum class BeamKind { power, coverage };

struct FootprintRecord {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  std::array<double, kRhLevels.size()> rh{};  // metres, ordered as kRhLevels
  double sensitivity = 0.0;
  double canopy_cover = 0.0;
  BeamKind beam = BeamKind::power;
  bool quality_ok = true;
  bool degraded = false;
  bool daytime = false;
  int acquired_month = 1;

  double rh_at(int level) const { return rh[rh_index(level)]; }
  double rh98() const { return rh.back(); }

  void validate() const {
    for (std::size_t i = 1; i < rh.size(); ++i)
      require(rh[i] >= rh[i - 1], "footprint " + id + ": RH metrics must be non-decreasing with level");
    require(sensitivity >= 0 && sensitivity <= 1, "footprint " + id + ": sensitivity outside [0,1]");
    require(canopy_cover >= 0 && canopy_cover <= 1, "footprint " + id + ": canopy cover outside [0,1]");
    require(acquired_month >= 1 && acquired_month <= 12, "footprint " + id + ": month outside 1..12");
  }
};

/// In-situ plot with individual tree heights.
struct FieldPlot {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  std::vector<double> tree_heights;
  std::optional<std::string> matched_footprint_id;

  void validate() const {
    require(!tree_heights.empty(), "plot " + id + ": no tree heights");
    for (double h : tree_heights) require(h > 0, "plot " + id + ": tree heights must be positive");
  }
};

/// Keeps power-beam, quality-flagged, non-degraded night-time shots.
inline std::vector<FootprintRecord> quality_filter(const std::vector<FootprintRecord>& records) {
  std::vector<FootprintRecord> out;
  for (const auto& r : records)
    if (r.quality_ok && !r.degraded && !r.daytime && r.beam == BeamKind::power) out.push_back(r);
  return out;
}

inline bool passes_sensitivity(const FootprintRecord& r) {
  return r.canopy_cover < 0.8 ? r.sensitivity >= 0.95 : r.sensitivity >= 0.98;
}

/// Cover-dependent sensitivity threshold: 0.95 below 80% cover, 0.98 at or above.
inline std::vector<FootprintRecord> sensitivity_cover_filter(const std::vector<FootprintRecord>& records) {
  std::vector<FootprintRecord> out;
  for (const auto& r : records)
    if (passes_sensitivity(r)) out.push_back(r);
  return out;
}

using NdviLookup = std::function<double(double lon, double lat)>;
using MaskLookup = std::function<bool(double lon, double lat)>;

/// Drops footprints whose |canopy cover - NDVI| exceeds mean + one population
/// standard deviation of that difference over the input set. Fewer than two
/// records pass through unchanged with a warning appended to `warnings`.
inline std::vector<FootprintRecord> ndvi_consistency_filter(const std::vector<FootprintRecord>& records,
                                                            const NdviLookup& ndvi_at,
                                                            std::vector<std::string>* warnings = nullptr) {
  if (records.size() < 2) {
    if (warnings) warnings->push_back("ndvi_consistency_filter: fewer than 2 records, spread undefined; all kept");
    return records;
  }
  std::vector<double> d(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double ndvi = ndvi_at(records[i].lon, records[i].lat);
    require(std::isfinite(ndvi), "ndvi_consistency_filter: NDVI undefined at footprint " + records[i].id);
    d[i] = std::abs(records[i].canopy_cover - ndvi);
  }
  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double limit = mean + std::sqrt(var / static_cast<double>(d.size()));
  std::vector<FootprintRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (d[i] <= limit) out.push_back(records[i]);
  return out;
}

inline std::vector<FootprintRecord> forest_mask_filter(const std::vector<FootprintRecord>& records,
                                                       const MaskLookup& mask_at) {
  std::vector<FootprintRecord> out;
  for (const auto& r : records)
    if (mask_at(r.lon, r.lat)) out.push_back(r);
  return out;
}

enum class DropReason { none, quality, sensitivity, forest_mask, ndvi_consistency };

inline const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::none: return "kept";
    case DropReason::quality: return "quality";
    case DropReason::sensitivity: return "sensitivity";
    case DropReason::forest_mask: return "forest_mask";
    case DropReason::ndvi_consistency: return "ndvi_consistency";
  }
  return "unknown";
}

struct FilterOutcome {
  std::vector<FootprintRecord> kept;
  /// One entry per input record, in input order.
  std::vector<DropReason> reasons;
  std::vector<std::string> warnings;
};

/// quality -> sensitivity -> forest mask -> NDVI consistency. The NDVI rule
/// runs last because its threshold depends on the surviving set. Either
/// lookup may be empty, which skips that stage.
inline FilterOutcome run_filter_chain(const std::vector<FootprintRecord>& records, const NdviLookup& ndvi_at,
                                      const MaskLookup& mask_at) {
  FilterOutcome out;
  out.reasons.assign(records.size(), DropReason::none);
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!(r.quality_ok && !r.degraded && !r.daytime && r.beam == BeamKind::power)) out.reasons[i] = DropReason::quality;
    else if (!passes_sensitivity(r)) out.reasons[i] = DropReason::sensitivity;
    else if (mask_at && !mask_at(r.lon, r.lat)) out.reasons[i] = DropReason::forest_mask;
    else alive.push_back(i);
  }
  if (ndvi_at) {
    std::vector<FootprintRecord> subset;
    for (auto i : alive) subset.push_back(records[i]);
    const auto kept = ndvi_consistency_filter(subset, ndvi_at, &out.warnings);
    std::size_t k = 0;
    std::vector<std::size_t> survivors;
    for (std::size_t j = 0; j < subset.size(); ++j) {
      if (k < kept.size() && kept[k].id == subset[j].id) {
        survivors.push_back(alive[j]);
        ++k;
      } else {
        out.reasons[alive[j]] = DropReason::ndvi_consistency;
      }
    }
    alive = std::move(survivors);
  }
  for (auto i : alive) out.kept.push_back(records[i]);
  return out;
}

}  // namespace marsnet::gedi
