#pragma once

#include <array>
#include <string>
#include <vector>

#include "marsnet/raster/grid.hpp"
#include "marsnet/raster/optical.hpp"

namespace marsnet::raster {

enum class Modality { sentinel2 = 0, sentinel1 = 1, palsar2 = 2, ancillary = 3 };

inline constexpr std::array<Modality, 4> kModalities{Modality::sentinel2, Modality::sentinel1, Modality::palsar2,
                                                     Modality::ancillary};
inline constexpr std::array<int, 4> kModalityBands{17, 9, 4, 4};
inline constexpr int kTotalBands = 34;

inline int band_count(Modality m) { return kModalityBands[static_cast<int>(m)]; }

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::sentinel2: return "sentinel2";
    case Modality::sentinel1: return "sentinel1";
    case Modality::palsar2: return "palsar2";
    case Modality::ancillary: return "ancillary";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  for (Modality m : kModalities)
    if (s == to_string(m)) return m;
  if (s == "s2") return Modality::sentinel2;
  if (s == "s1") return Modality::sentinel1;
  if (s == "palsar") return Modality::palsar2;
  if (s == "anc") return Modality::ancillary;
  fail_input("unknown modality '" + s + "'");
}

inline std::vector<std::string> default_band_names(Modality m) {
  switch (m) {
    case Modality::sentinel2: {
      std::vector<std::string> n(kOpticalBands.begin(), kOpticalBands.end());
      for (const char* s : {"NDVI_median", "EVI_median", "NDVI_max", "NDVI_min", "NDVI_diff"}) n.emplace_back(s);
      return n;
    }
    case Modality::sentinel1: {
      std::vector<std::string> n;
      for (const char* pol : {"VV", "VH", "VH_VV"})
        for (const char* p : {"p10", "p50", "p90"}) n.push_back(std::string(pol) + "_" + p);
      return n;
    }
    case Modality::palsar2: return {"HH", "HV", "HV_HH", "LIA"};
    case Modality::ancillary: return {"elevation", "slope", "longitude", "latitude"};
  }
  return {};
}

struct ModalityStack {
  Modality modality = Modality::sentinel2;
  Raster raster;
  std::vector<std::string> band_names;
};

/// The four stacks indexed by Modality.
using StackSet = std::array<ModalityStack, 4>;

inline const ModalityStack& stack_of(const StackSet& s, Modality m) { return s[static_cast<int>(m)]; }

/// Validates band counts and grid identity and attaches names.
inline StackSet assemble_stacks(Raster sentinel2, Raster sentinel1, Raster palsar2, Raster ancillary) {
  std::array<Raster*, 4> parts{&sentinel2, &sentinel1, &palsar2, &ancillary};
  const GridGeometry grid = sentinel2.geometry();
  StackSet out;
  int total = 0;
  for (Modality m : kModalities) {
    Raster& r = *parts[static_cast<int>(m)];
    require(r.bands() == band_count(m), std::string("assemble_stacks: ") + to_string(m) + " needs " +
                                            std::to_string(band_count(m)) + " bands, got " + std::to_string(r.bands()));
    require(r.geometry() == grid, std::string("assemble_stacks: ") + to_string(m) + " grid differs from sentinel2");
    total += r.bands();
    out[static_cast<int>(m)] = {m, std::move(r), default_band_names(m)};
  }
  require(total == kTotalBands, "assemble_stacks: total band count must be 34");
  return out;
}

}  // namespace marsnet::raster
