#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "marsnet/eval/metrics.hpp"
#include "marsnet/geo/projection.hpp"

using namespace marsnet;

namespace {

// Kruger series to third order in n, written independently of the library.
geo::ProjectedPoint kruger_forward(double lon, double lat, double lon0) {
  constexpr double a = 6378137.0, f = 1 / 298.257223563, k0 = 0.9996;
  const double n = f / (2 - f);
  const double A = a / (1 + n) * (1 + n * n / 4 + n * n * n * n / 64);
  const double alpha[3] = {n / 2 - 2 * n * n / 3 + 5 * n * n * n / 16, 13 * n * n / 48 - 3 * n * n * n / 5,
                           61 * n * n * n / 240};
  const double phi = lat * std::numbers::pi / 180, lam = (lon - lon0) * std::numbers::pi / 180;
  const double c = 2 * std::sqrt(n) / (1 + n);
  const double t = std::sinh(std::atanh(std::sin(phi)) - c * std::atanh(c * std::sin(phi)));
  const double xi = std::atan2(t, std::cos(lam));
  const double eta = std::atanh(std::sin(lam) / std::sqrt(1 + t * t));
  double e = eta, nn = xi;
  for (int j = 1; j <= 3; ++j) {
    e += alpha[j - 1] * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
    nn += alpha[j - 1] * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
  }
  return {500000 + k0 * A * e, k0 * A * nn};
}

}  // namespace

TEST(Utm, AgreesWithKrugerSeriesAcrossZone) {
  const geo::UtmZone z{52, true};
  for (double lat = 0.5; lat < 70; lat += 4.5)
    for (double dlon = -3.0; dlon <= 3.0; dlon += 0.75) {
      const double lon = z.central_meridian() + dlon;
      const auto p = geo::to_utm({lon, lat}, z);
      const auto q = kruger_forward(lon, lat, z.central_meridian());
      EXPECT_NEAR(p.x, q.x, 5e-3) << lon << "," << lat;
      EXPECT_NEAR(p.y, q.y, 5e-3) << lon << "," << lat;
    }
}

TEST(Utm, RoundTripAndCentralMeridian) {
  const geo::UtmZone z{52, true};
  EXPECT_EQ(z.central_meridian(), 129.0);
  EXPECT_EQ(z.epsg(), 32652);
  const auto origin = geo::to_utm({129.0, 0.0}, z);
  EXPECT_NEAR(origin.x, 500000.0, 1e-6);
  EXPECT_NEAR(origin.y, 0.0, 1e-6);
  for (double lat : {41.5, 43.0, 44.7})
    for (double lon : {126.2, 127.9, 130.4}) {
      const auto back = geo::from_utm(geo::to_utm({lon, lat}, z), z);
      // 1e-8 degrees is about a millimetre on the ground.
      EXPECT_NEAR(back.lon, lon, 1e-8);
      EXPECT_NEAR(back.lat, lat, 1e-8);
    }
}

TEST(Metrics, WorkedExample) {
  const auto m = eval::metrics(std::vector<double>{0, 2}, std::vector<double>{1, 1});
  ASSERT_TRUE(m.r2.has_value());
  EXPECT_DOUBLE_EQ(*m.r2, 0.0);
  EXPECT_DOUBLE_EQ(m.rmse, 1.0);
  EXPECT_DOUBLE_EQ(*m.rrmse_pct, 100.0);
  EXPECT_EQ(m.n, 2u);
}

TEST(Metrics, PerfectPredictionAndUndefinedCases) {
  const std::vector<double> y{3, 5, 9, 11};
  const auto m = eval::metrics(y, y);
  EXPECT_DOUBLE_EQ(*m.r2, 1.0);
  EXPECT_DOUBLE_EQ(m.rmse, 0.0);
  EXPECT_DOUBLE_EQ(*m.slope, 1.0);
  EXPECT_NEAR(*m.intercept, 0.0, 1e-12);

  const auto flat = eval::metrics(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3});
  EXPECT_FALSE(flat.r2.has_value());
  const auto zero_mean = eval::metrics(std::vector<double>{1, -1}, std::vector<double>{1, -1});
  EXPECT_FALSE(zero_mean.rrmse_pct.has_value());
  EXPECT_THROW(eval::metrics(std::vector<double>{}, std::vector<double>{}), Error);
  EXPECT_THROW(eval::metrics(std::vector<double>{1}, std::vector<double>{1, 2}), Error);
}

TEST(Metrics, PropertiesUnderRandomData) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> obs(30), pred(30);
    for (int i = 0; i < 30; ++i) {
      obs[i] = rng.uniform(1, 40);
      pred[i] = obs[i] + rng.normal(0, 3);
    }
    const auto m = eval::metrics(obs, pred);
    EXPECT_GE(m.rmse, 0.0);
    if (m.r2) {
      EXPECT_LE(*m.r2, 1.0 + 1e-12);
    }
    if (m.conventional_r2) {
      EXPECT_LE(*m.conventional_r2, 1.0 + 1e-12);
    }
    double mp = 0;
    for (double p : pred) mp += p / 30;
    EXPECT_NEAR(*m.rrmse_pct, m.rmse / mp * 100, 1e-9);
  }
}
