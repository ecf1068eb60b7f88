#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "marsnet/io/text.hpp"
#include "marsnet/raster/grid.hpp"

namespace marsnet::eval {

/// Counts of two maps over shared bins [k*w, (k+1)*w), k = 0..bins-1.
struct HeightHistogram {
  double bin_width = 1.0;
  std::vector<std::size_t> counts_a;
  std::vector<std::size_t> counts_b;

  std::size_t bins() const { return counts_a.size(); }
  double lower(std::size_t k) const { return static_cast<double>(k) * bin_width; }
  double upper(std::size_t k) const { return static_cast<double>(k + 1) * bin_width; }
};

inline std::size_t bin_of(double v, double width) { return static_cast<std::size_t>(std::floor(v / width)); }

/// Aligned histograms of the valid pixels of two maps, from 0 up to the bin
/// holding the largest value of either map.
inline HeightHistogram height_histogram(const raster::Raster& a, const raster::Raster& b, double bin_width = 1.0) {
  require(std::isfinite(bin_width) && bin_width > 0, "histogram bin width must be positive");
  require(a.geometry() == b.geometry(), "histogram maps do not share a grid");
  require(a.bands() == 1 && b.bands() == 1, "histogram maps must have one band");
  double top = 0;
  std::size_t valid_a = 0, valid_b = 0;
  auto scan = [&](const raster::Raster& m, std::size_t& valid, const char* which) {
    for (std::size_t p = 0; p < m.geometry().pixels(); ++p) {
      if (m.is_nodata(p)) continue;
      const double v = m.data()[p];
      if (!std::isfinite(v)) continue;
      if (v < 0) fail_input(std::string("histogram map ") + which + " has a negative height");
      top = std::max(top, v);
      ++valid;
    }
  };
  scan(a, valid_a, "a");
  scan(b, valid_b, "b");
  if (!valid_a || !valid_b) fail_input("histogram map has no valid pixels");
  HeightHistogram h;
  h.bin_width = bin_width;
  const std::size_t bins = bin_of(top, bin_width) + 1;
  h.counts_a.assign(bins, 0);
  h.counts_b.assign(bins, 0);
  auto fill = [&](const raster::Raster& m, std::vector<std::size_t>& counts) {
    for (std::size_t p = 0; p < m.geometry().pixels(); ++p) {
      const double v = m.data()[p];
      if (!m.is_nodata(p) && std::isfinite(v)) ++counts[bin_of(v, bin_width)];
    }
  };
  fill(a, h.counts_a);
  fill(b, h.counts_b);
  return h;
}

inline io::Table histogram_table(const HeightHistogram& h) {
  io::Table t;
  t.header = {"lower_m", "upper_m", "count_a", "count_b"};
  for (std::size_t k = 0; k < h.bins(); ++k)
    t.rows.push_back({format_number(h.lower(k)), format_number(h.upper(k)), std::to_string(h.counts_a[k]),
                      std::to_string(h.counts_b[k])});
  return t;
}

/// Indices of bins larger than both neighbours (plateaus count once, at their
/// first bin).
inline std::vector<std::size_t> histogram_modes(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> modes;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (!counts[k]) continue;
    const bool left = k == 0 || counts[k - 1] < counts[k];
    std::size_t e = k;
    while (e + 1 < counts.size() && counts[e + 1] == counts[k]) ++e;
    const bool right = e + 1 == counts.size() || counts[e + 1] < counts[k];
    if (left && right) modes.push_back(k);
    k = e;
  }
  return modes;
}

}  // namespace marsnet::eval
