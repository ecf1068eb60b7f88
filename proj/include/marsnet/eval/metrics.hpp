#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "marsnet/core/common.hpp"

namespace marsnet::eval {

/// Accuracy summary for paired observed (x) and predicted (y) heights.
///
/// `r2` follows the printed definition whose denominator is taken about the
/// mean of the *predictions*: R2 = 1 - sum (x - y)^2 / sum (x - mean(y))^2.
/// `conventional_r2` uses the mean of the observations instead and is kept
/// only for cross-checking.
struct MetricsReport {
  std::optional<double> r2;
  double rmse = 0.0;
  std::optional<double> rrmse_pct;
  std::size_t n = 0;
  std::optional<double> conventional_r2;
  /// predicted = slope * observed + intercept; missing when observed has no spread.
  std::optional<double> slope;
  std::optional<double> intercept;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
inline LineFit ols_fit(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "ols_fit: x and y differ in length");
  require(x.size() >= 2, "insufficient pairs: need at least 2, got " + std::to_string(x.size()));
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0, "ols_fit: degenerate x (zero variance)");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

inline MetricsReport metrics(std::span<const double> observed, std::span<const double> predicted) {
  require(observed.size() == predicted.size(), "metrics: observed and predicted differ in length");
  require(!observed.empty(), "metrics: no samples");
  const std::size_t n = observed.size();
  double mean_pred = 0, mean_obs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_pred += predicted[i];
    mean_obs += observed[i];
  }
  mean_pred /= static_cast<double>(n);
  mean_obs /= static_cast<double>(n);

  double sse = 0, about_pred_mean = 0, about_obs_mean = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = observed[i] - predicted[i];
    sse += r * r;
    about_pred_mean += (observed[i] - mean_pred) * (observed[i] - mean_pred);
    about_obs_mean += (observed[i] - mean_obs) * (observed[i] - mean_obs);
  }

  MetricsReport rep;
  rep.n = n;
  rep.rmse = std::sqrt(sse / static_cast<double>(n));
  if (n >= 2 && about_pred_mean > 0) rep.r2 = 1.0 - sse / about_pred_mean;
  if (n >= 2 && about_obs_mean > 0) {
    rep.conventional_r2 = 1.0 - sse / about_obs_mean;
    const LineFit fit = ols_fit(observed, predicted);
    rep.slope = fit.slope;
    rep.intercept = fit.intercept;
  }
  if (mean_pred != 0.0) rep.rrmse_pct = rep.rmse / mean_pred * 100.0;
  return rep;
}

inline MetricsReport metrics(const std::vector<double>& observed, const std::vector<double>& predicted) {
  return metrics(std::span<const double>(observed), std::span<const double>(predicted));
}

}  // namespace marsnet::eval
