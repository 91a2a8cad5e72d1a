#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>

#include "lago/error.hpp"

namespace lago::dist {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Upper tail 1 - Phi(x), accurate far into the tail.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("p", "normal quantile needs 0 < p < 1");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double chi_squared_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("p", "chi-squared quantile needs 0 < p < 1");
  if (!(df > 0.0)) throw ValidationError("df", "degrees of freedom must be > 0");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), p);
}

inline double chi_squared_sf(double x, double df) {
  if (!(df > 0.0)) throw ValidationError("df", "degrees of freedom must be > 0");
  if (x <= 0.0) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

// Two-sided p-value of a standard normal statistic.
inline double two_sided_normal_p(double z) {
  const double p = 2.0 * normal_sf(std::abs(z));
  return p > 1.0 ? 1.0 : p;
}

}  // namespace lago::dist
