#pragma once

// WGS84 Universal Transverse Mercator, Snyder's series (USGS PP 1395,
// pp. 61-64). Accurate to millimetres within a zone.

#include <cmath>

#include "marsnet/core/common.hpp"

namespace marsnet::geo {

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
};

struct UtmZone {
  int zone = 52;
  bool north = true;

  double central_meridian() const { return (zone - 1) * 6.0 - 180.0 + 3.0; }
  int epsg() const { return (north ? 32600 : 32700) + zone; }
  friend bool operator==(const UtmZone&, const UtmZone&) = default;
};

namespace wgs84 {
inline constexpr double a = 6378137.0;
inline constexpr double f = 1.0 / 298.257223563;
inline constexpr double e2 = f * (2.0 - f);
inline constexpr double k0 = 0.9996;
inline constexpr double false_easting = 500000.0;
inline constexpr double false_northing_south = 10000000.0;
}  // namespace wgs84

namespace detail {
inline double meridian_arc(double phi) {
  using namespace wgs84;
  const double e4 = e2 * e2, e6 = e4 * e2;
  return a * ((1 - e2 / 4 - 3 * e4 / 64 - 5 * e6 / 256) * phi - (3 * e2 / 8 + 3 * e4 / 32 + 45 * e6 / 1024) * std::sin(2 * phi) +
              (15 * e4 / 256 + 45 * e6 / 1024) * std::sin(4 * phi) - (35 * e6 / 3072) * std::sin(6 * phi));
}
inline constexpr double deg = M_PI / 180.0;
}  // namespace detail

inline ProjectedPoint to_utm(LonLat p, UtmZone zone) {
  using namespace wgs84;
  const double ep2 = e2 / (1 - e2);
  const double phi = p.lat * detail::deg;
  const double dl = (p.lon - zone.central_meridian()) * detail::deg;
  const double s = std::sin(phi), c = std::cos(phi), t = std::tan(phi);
  const double N = a / std::sqrt(1 - e2 * s * s);
  const double T = t * t;
  const double C = ep2 * c * c;
  const double A = dl * c;
  const double M = detail::meridian_arc(phi);
  const double x = k0 * N * (A + (1 - T + C) * std::pow(A, 3) / 6 + (5 - 18 * T + T * T + 72 * C - 58 * ep2) * std::pow(A, 5) / 120);
  double y = k0 * (M + N * t * (A * A / 2 + (5 - T + 9 * C + 4 * C * C) * std::pow(A, 4) / 24 +
                                (61 - 58 * T + T * T + 600 * C - 330 * ep2) * std::pow(A, 6) / 720));
  if (!zone.north) y += false_northing_south;
  return {x + false_easting, y};
}

inline LonLat from_utm(ProjectedPoint p, UtmZone zone) {
  using namespace wgs84;
  const double ep2 = e2 / (1 - e2);
  const double e4 = e2 * e2, e6 = e4 * e2;
  const double x = p.x - false_easting;
  const double y = zone.north ? p.y : p.y - false_northing_south;
  const double M = y / k0;
  const double mu = M / (a * (1 - e2 / 4 - 3 * e4 / 64 - 5 * e6 / 256));
  const double e1 = (1 - std::sqrt(1 - e2)) / (1 + std::sqrt(1 - e2));
  const double phi1 = mu + (3 * e1 / 2 - 27 * std::pow(e1, 3) / 32) * std::sin(2 * mu) +
                      (21 * e1 * e1 / 16 - 55 * std::pow(e1, 4) / 32) * std::sin(4 * mu) +
                      (151 * std::pow(e1, 3) / 96) * std::sin(6 * mu) + (1097 * std::pow(e1, 4) / 512) * std::sin(8 * mu);
  const double s = std::sin(phi1), c = std::cos(phi1), t = std::tan(phi1);
  const double C1 = ep2 * c * c;
  const double T1 = t * t;
  const double N1 = a / std::sqrt(1 - e2 * s * s);
  const double R1 = a * (1 - e2) / std::pow(1 - e2 * s * s, 1.5);
  const double D = x / (N1 * k0);
  const double lat = phi1 - (N1 * t / R1) * (D * D / 2 - (5 + 3 * T1 + 10 * C1 - 4 * C1 * C1 - 9 * ep2) * std::pow(D, 4) / 24 +
                                             (61 + 90 * T1 + 298 * C1 + 45 * T1 * T1 - 252 * ep2 - 3 * C1 * C1) * std::pow(D, 6) / 720);
  const double lon = (D - (1 + 2 * T1 + C1) * std::pow(D, 3) / 6 +
                      (5 - 2 * C1 + 28 * T1 - 3 * C1 * C1 + 8 * ep2 + 24 * T1 * T1) * std::pow(D, 5) / 120) /
                     c;
  return {zone.central_meridian() + lon / detail::deg, lat / detail::deg};
}

}  // namespace marsnet::geo
