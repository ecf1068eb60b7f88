#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "marsnet/eval/metrics.hpp"
#include "marsnet/gedi/footprint.hpp"

namespace marsnet::gedi {

/// Linear map from RH98 to dominant height.
struct CalibrationModel {
  double slope = 1.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double rrmse_pct = 0.0;
  std::size_t n = 0;
};

inline double apply_calibration(const CalibrationModel& model, double rh98) { return model.slope * rh98 + model.intercept; }

/// OLS fit of dominant height on RH98. Pairs are (rh98, dominant_height).
inline CalibrationModel fit_calibration(const std::vector<std::pair<double, double>>& pairs) {
  require(pairs.size() >= 2, "insufficient pairs: calibration needs at least 2");
  std::vector<double> x, y;
  for (auto [rh, dom] : pairs) {
    x.push_back(rh);
    y.push_back(dom);
  }
  const auto fit = eval::ols_fit(x, y);
  CalibrationModel m;
  m.slope = fit.slope;
  m.intercept = fit.intercept;
  m.n = pairs.size();
  std::vector<double> pred(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) pred[i] = apply_calibration(m, x[i]);
  const auto rep = eval::metrics(y, pred);
  m.r2 = rep.r2.value_or(1.0);
  m.rrmse_pct = rep.rrmse_pct.value_or(0.0);
  return m;
}

enum class FieldStatistic { max, top5_mean, top10_mean, top15_mean, top20_mean, all_mean };

inline constexpr std::array<FieldStatistic, 6> kFieldStatistics{FieldStatistic::max,        FieldStatistic::top5_mean,
                                                                FieldStatistic::top10_mean, FieldStatistic::top15_mean,
                                                                FieldStatistic::top20_mean, FieldStatistic::all_mean};

inline const char* to_string(FieldStatistic s) {
  switch (s) {
    case FieldStatistic::max: return "max";
    case FieldStatistic::top5_mean: return "top5_mean";
    case FieldStatistic::top10_mean: return "top10_mean";
    case FieldStatistic::top15_mean: return "top15_mean";
    case FieldStatistic::top20_mean: return "top20_mean";
    case FieldStatistic::all_mean: return "all_mean";
  }
  return "?";
}

/// Plot-level height statistic. `short_plot` is set when a top-K mean had to
/// fall back to all trees because the plot holds fewer than K.
inline double field_statistic(const FieldPlot& plot, FieldStatistic stat, bool* short_plot = nullptr) {
  plot.validate();
  std::vector<double> h = plot.tree_heights;
  std::sort(h.begin(), h.end(), std::greater<>());
  std::size_t k = h.size();
  switch (stat) {
    case FieldStatistic::max: return h.front();
    case FieldStatistic::top5_mean: k = 5; break;
    case FieldStatistic::top10_mean: k = 10; break;
    case FieldStatistic::top15_mean: k = 15; break;
    case FieldStatistic::top20_mean: k = 20; break;
    case FieldStatistic::all_mean: break;
  }
  if (short_plot) *short_plot = k > h.size();
  k = std::min(k, h.size());
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += h[i];
  return s / static_cast<double>(k);
}

/// Dominant height: mean of the ten tallest trees.
inline double dominant_height(const FieldPlot& plot) { return field_statistic(plot, FieldStatistic::top10_mean); }

struct RhMetricEntry {
  double r2 = 0.0;
  double rrmse_pct = 0.0;
  std::size_t n = 0;
  std::size_t short_plots = 0;
};

struct RhMetricTable {
  std::map<std::pair<int, FieldStatistic>, RhMetricEntry> rows;

  const RhMetricEntry& at(int level, FieldStatistic stat) const { return rows.at({level, stat}); }
};

/// Plot/footprint pairs joined through FieldPlot::matched_footprint_id.
struct MatchedPair {
  const FieldPlot* plot = nullptr;
  const FootprintRecord* footprint = nullptr;
};

inline std::vector<MatchedPair> match_plots(const std::vector<FieldPlot>& plots, const std::vector<FootprintRecord>& records) {
  std::unordered_map<std::string, const FootprintRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::vector<MatchedPair> out;
  for (const auto& p : plots) {
    if (!p.matched_footprint_id) continue;
    auto it = by_id.find(*p.matched_footprint_id);
    if (it != by_id.end()) out.push_back({&p, it->second});
  }
  return out;
}

/// For every (RH level, field statistic) pair: OLS field_stat = a * rh + b,
/// then R2 and rRMSE of the fitted values against the field statistic.
inline RhMetricTable rh_field_correlation(const std::vector<FieldPlot>& plots, const std::vector<FootprintRecord>& records,
                                          const std::vector<int>& levels = {kRhLevels.begin(), kRhLevels.end()}) {
  const auto pairs = match_plots(plots, records);
  require(pairs.size() >= 2, "insufficient pairs: " + std::to_string(pairs.size()) + " matched plots");
  RhMetricTable table;
  for (int level : levels) {
    std::vector<double> rh;
    for (const auto& mp : pairs) rh.push_back(mp.footprint->rh_at(level));
    for (FieldStatistic stat : kFieldStatistics) {
      std::vector<double> field;
      std::size_t short_plots = 0;
      for (const auto& mp : pairs) {
        bool is_short = false;
        field.push_back(field_statistic(*mp.plot, stat, &is_short));
        short_plots += is_short;
      }
      const auto fit = eval::ols_fit(rh, field);
      std::vector<double> fitted(rh.size());
      for (std::size_t i = 0; i < rh.size(); ++i) fitted[i] = fit.slope * rh[i] + fit.intercept;
      const auto rep = eval::metrics(field, fitted);
      table.rows[{level, stat}] = {rep.r2.value_or(1.0), rep.rrmse_pct.value_or(0.0), rh.size(), short_plots};
    }
  }
  return table;
}

/// Summary of one RH80/RH98 ratio stratum. Offsets follow the inverted-axes
/// convention (RH98 as the response, field dominant height as predictor);
/// negative values mean RH98 underestimates.
struct RatioGroup {
  std::size_t n = 0;
  /// Mean of (rh98 - field dominant height).
  double mean_offset_m = 0.0;
  /// Intercept of rh98 = a * field + b.
  std::optional<double> intercept_rh_on_field;
  /// Intercept of field = a * rh98 + b.
  std::optional<double> intercept_field_on_rh;
};

struct RatioStratification {
  RatioGroup at_or_above;
  RatioGroup below;
  std::size_t excluded = 0;
  std::vector<std::string> warnings;
};

inline RatioStratification stratify_by_rh_ratio(const std::vector<FieldPlot>& plots,
                                                const std::vector<FootprintRecord>& records, double threshold) {
  RatioStratification out;
  std::vector<double> rh_hi, f_hi, rh_lo, f_lo;
  for (const auto& mp : match_plots(plots, records)) {
    const double rh98 = mp.footprint->rh98();
    if (!(rh98 > 0)) {
      ++out.excluded;
      out.warnings.push_back("footprint " + mp.footprint->id + ": rh98 <= 0, pair excluded");
      continue;
    }
    const double ratio = mp.footprint->rh_at(80) / rh98;
    const double field = dominant_height(*mp.plot);
    if (ratio >= threshold) {
      rh_hi.push_back(rh98);
      f_hi.push_back(field);
    } else {
      rh_lo.push_back(rh98);
      f_lo.push_back(field);
    }
  }
  auto summarize = [](const std::vector<double>& rh, const std::vector<double>& field) {
    RatioGroup g;
    g.n = rh.size();
    if (g.n == 0) return g;
    double s = 0;
    for (std::size_t i = 0; i < rh.size(); ++i) s += rh[i] - field[i];
    g.mean_offset_m = s / static_cast<double>(g.n);
    auto has_spread = [](const std::vector<double>& v) {
      return v.size() >= 2 && std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); });
    };
    if (has_spread(field)) g.intercept_rh_on_field = eval::ols_fit(field, rh).intercept;
    if (has_spread(rh)) g.intercept_field_on_rh = eval::ols_fit(rh, field).intercept;
    return g;
  };
  out.at_or_above = summarize(rh_hi, f_hi);
  out.below = summarize(rh_lo, f_lo);
  return out;
}

}  // namespace marsnet::gedi
