#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lago/distributions.hpp"
#include "lago/error.hpp"
#include "lago/estimation.hpp"
#include "lago/model.hpp"
#include "lago/optimizer.hpp"

namespace lago {

struct MeanInterval {
  InterventionPackage x;
  double mean_hat = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double se_eta = 0.0;  // standard error on the link scale

  bool contains(double value) const { return lower <= value && value <= upper; }
};

namespace detail {

inline void check_inference_inputs(const FitResult& fit, const InterventionPackage& x, const CenterCovariates& z) {
  if (x.size() != fit.components()) throw DimensionError("package length", fit.components(), x.size());
  if (z.size() != fit.covariates()) throw DimensionError("covariate length", fit.covariates(), z.size());
  const auto d = static_cast<Eigen::Index>(fit.dimension());
  if (fit.covariance.rows() != d || fit.covariance.cols() != d) {
    throw DimensionError("covariance", fit.dimension(), static_cast<std::size_t>(fit.covariance.rows()));
  }
}

// Variance of the linear predictor at (x, z). A clearly negative value means
// the covariance is not positive semi-definite.
inline double eta_variance(const FitResult& fit, const InterventionPackage& x, const CenterCovariates& z) {
  const Vector row = design_row(x.doses(), z.values());
  const double v = row.dot(fit.covariance * row);
  const double scale = row.cwiseAbs().dot(fit.covariance.cwiseAbs() * row.cwiseAbs());
  if (v < -1e-10 * std::max(scale, 1.0)) {
    throw Error("covariance is not positive semi-definite: negative variance " + std::to_string(v) +
                " for the linear predictor");
  }
  return std::max(v, 0.0);
}

inline MeanInterval interval_with_multiplier(const FitResult& fit, const InterventionPackage& x,
                                             const CenterCovariates& z, double multiplier) {
  check_inference_inputs(fit, x, z);
  const double eta = linear_predictor(fit.beta_hat, x.doses(), z.values());
  const double se = std::sqrt(eta_variance(fit, x, z));
  MeanInterval out;
  out.x = x;
  out.se_eta = se;
  out.mean_hat = fit.link.inverse(eta);
  out.lower = fit.link.inverse(eta - multiplier * se);
  out.upper = fit.link.inverse(eta + multiplier * se);
  return out;
}

}  // namespace detail

/// Pointwise interval for the mean outcome: the Wald interval for eta mapped
/// through the inverse link.
inline MeanInterval mean_ci(const FitResult& fit, const InterventionPackage& x, const CenterCovariates& z,
                            double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("level", "must be in (0, 1)");
  return detail::interval_with_multiplier(fit, x, z, dist::normal_quantile(0.5 + level / 2.0));
}

struct ConfidenceSet {
  double grid_increment = 0.1;
  std::vector<InterventionPackage> members;
  std::size_t total_grid_points = 0;

  double set_percentage() const {
    return total_grid_points == 0 ? 0.0
                                  : static_cast<double>(members.size()) / static_cast<double>(total_grid_points);
  }

  bool contains(const Vector& x, double tol = 1e-9) const {
    return std::any_of(members.begin(), members.end(),
                       [&](const InterventionPackage& m) { return (m.doses() - x).cwiseAbs().maxCoeff() <= tol; });
  }
};

/// Grid packages whose pointwise interval contains theta.
inline ConfidenceSet confidence_set(const FitResult& fit, const ComponentBounds& bounds, const CenterCovariates& z,
                                    const TargetSpec& target, double increment = 0.1, double level = 0.95,
                                    double max_cells = 1e8) {
  target.validate(fit.link);
  if (bounds.size() != fit.components()) throw DimensionError("bounds", fit.components(), bounds.size());
  const double crit = dist::normal_quantile(0.5 + level / 2.0);
  ConfidenceSet cs;
  cs.grid_increment = increment;
  for_each_grid_point(bounds, increment, max_cells, [&](const Vector& x) {
    ++cs.total_grid_points;
    InterventionPackage pkg(x);
    if (detail::interval_with_multiplier(fit, pkg, z, crit).contains(target.theta)) {
      cs.members.push_back(std::move(pkg));
    }
  });
  return cs;
}

struct BandEntry {
  InterventionPackage x;
  double mean_hat = 0.0;
  double band_lower = 0.0;
  double band_upper = 0.0;
};

struct ConfidenceBands {
  double grid_increment = 0.1;
  double multiplier = 0.0;
  std::vector<BandEntry> entries;
};

/// Scheffe multiplier sqrt(chi2_{level, df}) with df the number of
/// estimated coefficients.
inline double band_multiplier(const FitResult& fit, double level = 0.95) {
  return std::sqrt(dist::chi_squared_quantile(level, static_cast<double>(fit.free_parameters())));
}

inline ConfidenceBands confidence_bands(const FitResult& fit, const ComponentBounds& bounds,
                                        const CenterCovariates& z, double increment = 0.1, double level = 0.95,
                                        double max_cells = 1e8) {
  if (bounds.size() != fit.components()) throw DimensionError("bounds", fit.components(), bounds.size());
  ConfidenceBands cb;
  cb.grid_increment = increment;
  cb.multiplier = band_multiplier(fit, level);
  for_each_grid_point(bounds, increment, max_cells, [&](const Vector& x) {
    InterventionPackage pkg(x);
    const auto iv = detail::interval_with_multiplier(fit, pkg, z, cb.multiplier);
    cb.entries.push_back({std::move(pkg), iv.mean_hat, iv.lower, iv.upper});
  });
  return cb;
}

/// Sample quantile with linear interpolation between order statistics
/// (position (n - 1) q).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile", "no values");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile", "probability must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct CostQuartiles {
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;
};

/// Quartiles of the cost over the members of a confidence set.
inline CostQuartiles cost_quartiles(const ConfidenceSet& cs, const CostFunction& cf) {
  std::vector<double> costs;
  costs.reserve(cs.members.size());
  for (const auto& m : cs.members) costs.push_back(cost(cf, m));
  return {quantile(costs, 0.25), quantile(costs, 0.5), quantile(costs, 0.75)};
}

}  // namespace lago
