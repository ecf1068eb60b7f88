#pragma once

// Comma-separated footprint, plot and label tables plus the calibration
// key/value document.
//
// footprints: id,lon,lat,rh60,rh65,rh70,rh75,rh80,rh85,rh90,rh95,rh98,
//             sensitivity,cover,beam,quality,degrade,daytime,month
//             (beam is "power" or "coverage"; flags are 0/1)
// plots:      id,lon,lat,footprint_id,tree_heights  (heights ';'-separated)
// labels:     id,lon,lat,height

#include <filesystem>
#include <string>
#include <vector>

#include "marsnet/gedi/calibration.hpp"
#include "marsnet/gedi/footprint.hpp"
#include "marsnet/gedi/rasterize.hpp"
#include "marsnet/io/text.hpp"

namespace marsnet::gedi {

inline std::vector<std::string> footprint_header() {
  std::vector<std::string> h{"id", "lon", "lat"};
  for (int level : kRhLevels) h.push_back("rh" + std::to_string(level));
  for (const char* c : {"sensitivity", "cover", "beam", "quality", "degrade", "daytime", "month"}) h.emplace_back(c);
  return h;
}

inline std::vector<FootprintRecord> parse_footprints(const std::string& text, const std::string& source) {
  const auto t = io::parse_table(text, ',', source);
  std::vector<int> col;
  for (const auto& name : footprint_header()) col.push_back(t.require_column(name, source));
  std::vector<FootprintRecord> out;
  for (const auto& row : t.rows) {
    FootprintRecord r;
    std::size_t k = 0;
    r.id = row[col[k++]];
    r.lon = parse_number(row[col[k++]], "lon");
    r.lat = parse_number(row[col[k++]], "lat");
    for (auto& v : r.rh) v = parse_number(row[col[k++]], "rh");
    r.sensitivity = parse_number(row[col[k++]], "sensitivity");
    r.canopy_cover = parse_number(row[col[k++]], "cover");
    const std::string beam = row[col[k++]];
    if (beam == "power") r.beam = BeamKind::power;
    else if (beam == "coverage") r.beam = BeamKind::coverage;
    else fail_input(source + ": footprint " + r.id + ": unknown beam kind '" + beam + "'");
    r.quality_ok = io::parse_bool(row[col[k++]], "quality");
    r.degraded = io::parse_bool(row[col[k++]], "degrade");
    r.daytime = io::parse_bool(row[col[k++]], "daytime");
    r.acquired_month = static_cast<int>(parse_integer(row[col[k++]], "month"));
    r.validate();
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_footprints(const std::vector<FootprintRecord>& records) {
  io::Table t;
  t.header = footprint_header();
  for (const auto& r : records) {
    std::vector<std::string> row{r.id, format_number(r.lon), format_number(r.lat)};
    for (double v : r.rh) row.push_back(format_number(v));
    row.push_back(format_number(r.sensitivity));
    row.push_back(format_number(r.canopy_cover));
    row.emplace_back(r.beam == BeamKind::power ? "power" : "coverage");
    row.emplace_back(r.quality_ok ? "1" : "0");
    row.emplace_back(r.degraded ? "1" : "0");
    row.emplace_back(r.daytime ? "1" : "0");
    row.push_back(std::to_string(r.acquired_month));
    t.rows.push_back(std::move(row));
  }
  return io::format_table(t, ',');
}

inline std::vector<FieldPlot> parse_plots(const std::string& text, const std::string& source) {
  const auto t = io::parse_table(text, ',', source);
  const int cid = t.require_column("id", source), clon = t.require_column("lon", source),
            clat = t.require_column("lat", source), cfp = t.require_column("footprint_id", source),
            ch = t.require_column("tree_heights", source);
  std::vector<FieldPlot> out;
  for (const auto& row : t.rows) {
    FieldPlot p;
    p.id = row[cid];
    p.lon = parse_number(row[clon], "lon");
    p.lat = parse_number(row[clat], "lat");
    if (!row[cfp].empty()) p.matched_footprint_id = row[cfp];
    for (const auto& h : split(row[ch], ';'))
      if (!trim(h).empty()) p.tree_heights.push_back(parse_number(h, "tree height"));
    p.validate();
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string format_plots(const std::vector<FieldPlot>& plots) {
  io::Table t;
  t.header = {"id", "lon", "lat", "footprint_id", "tree_heights"};
  for (const auto& p : plots) {
    std::string hs;
    for (std::size_t i = 0; i < p.tree_heights.size(); ++i) {
      if (i) hs += ';';
      hs += format_number(p.tree_heights[i]);
    }
    t.rows.push_back({p.id, format_number(p.lon), format_number(p.lat), p.matched_footprint_id.value_or(""), hs});
  }
  return io::format_table(t, ',');
}

inline std::vector<LabeledPoint> parse_labels(const std::string& text, const std::string& source) {
  const auto t = io::parse_table(text, ',', source);
  const int cid = t.require_column("id", source), clon = t.require_column("lon", source),
            clat = t.require_column("lat", source), ch = t.require_column("height", source);
  std::vector<LabeledPoint> out;
  for (const auto& row : t.rows)
    out.push_back({row[cid], parse_number(row[clon], "lon"), parse_number(row[clat], "lat"), parse_number(row[ch], "height")});
  return out;
}

inline std::string format_labels(const std::vector<LabeledPoint>& points) {
  io::Table t;
  t.header = {"id", "lon", "lat", "height"};
  for (const auto& p : points) t.rows.push_back({p.id, format_number(p.lon), format_number(p.lat), format_number(p.height)});
  return io::format_table(t, ',');
}

inline std::string format_calibration(const CalibrationModel& m) {
  io::KeyValues kv;
  kv.set("slope", m.slope);
  kv.set("intercept", m.intercept);
  kv.set("r2", m.r2);
  kv.set("rrmse_pct", m.rrmse_pct);
  kv.set("n", std::to_string(m.n));
  return kv.str();
}

inline CalibrationModel parse_calibration(const std::string& text, const std::string& source) {
  const auto kv = io::KeyValues::parse(text, source);
  CalibrationModel m;
  m.slope = kv.number("slope");
  m.intercept = kv.number("intercept");
  m.r2 = kv.number("r2");
  m.rrmse_pct = kv.number("rrmse_pct");
  m.n = static_cast<std::size_t>(kv.integer("n"));
  require(m.n >= 2, source + ": calibration n must be >= 2");
  require(m.r2 <= 1.0, source + ": calibration r2 must be <= 1");
  return m;
}

inline std::string format_rh_table(const RhMetricTable& table) {
  io::Table t;
  t.header = {"rh_level", "field_statistic", "r2", "rrmse_pct", "n", "short_plots"};
  for (const auto& [key, e] : table.rows)
    t.rows.push_back({std::to_string(key.first), to_string(key.second), format_number(e.r2), format_number(e.rrmse_pct),
                      std::to_string(e.n), std::to_string(e.short_plots)});
  return io::format_table(t, ',');
}

/// Calibrated dominant-height labels from filtered footprints.
inline std::vector<LabeledPoint> calibrate_footprints(const std::vector<FootprintRecord>& records, const CalibrationModel& m) {
  std::vector<LabeledPoint> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.id, r.lon, r.lat, apply_calibration(m, r.rh98())});
  return out;
}

}  // namespace marsnet::gedi
