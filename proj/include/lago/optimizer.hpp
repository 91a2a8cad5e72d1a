#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lago/distributions.hpp"
#include "lago/error.hpp"
#include "lago/estimation.hpp"
#include "lago/model.hpp"

namespace lago {

enum class OptimizerMethod { linear_ranking, grid_search, fallback_upper_bounds };

inline std::string_view to_string(OptimizerMethod m) {
  switch (m) {
    case OptimizerMethod::linear_ranking: return "linear_ranking";
    case OptimizerMethod::grid_search: return "grid_search";
    case OptimizerMethod::fallback_upper_bounds: return "fallback_upper_bounds";
  }
  return "unknown";
}

struct Recommendation {
  InterventionPackage package;
  CenterCovariates covariates;
  double projected_mean = 0.0;
  double cost = 0.0;
  bool feasible = false;
  OptimizerMethod method = OptimizerMethod::linear_ranking;
};

struct GridOptions {
  double increment = 0.01;
  double max_cells = 1e8;
};

namespace detail {

inline void check_problem(const ParameterVector& beta, const CenterCovariates& z,
                          const ComponentBounds& bounds, const CostFunction& cf,
                          const TargetSpec& target, LinkFunction link) {
  if (bounds.size() != beta.components()) {
    throw DimensionError("bounds vs beta components", beta.components(), bounds.size());
  }
  if (cf.components() != beta.components()) {
    throw DimensionError("cost components vs beta components", beta.components(), cf.components());
  }
  if (z.size() != beta.covariates()) {
    throw DimensionError("covariate length", beta.covariates(), z.size());
  }
  target.validate(link);
}

inline Recommendation finish(const ParameterVector& beta, const CenterCovariates& z,
                             const CostFunction& cf, LinkFunction link, InterventionPackage x,
                             bool feasible, OptimizerMethod method) {
  Recommendation r;
  r.projected_mean = mean_response(link, beta, x, z);
  r.cost = cost(cf, x);
  r.package = std::move(x);
  r.covariates = z;
  r.feasible = feasible;
  r.method = method;
  return r;
}

inline Recommendation fallback(const ParameterVector& beta, const CenterCovariates& z,
                               const ComponentBounds& bounds, const CostFunction& cf, LinkFunction link) {
  return finish(beta, z, cf, link, InterventionPackage(bounds.upper()), false,
                OptimizerMethod::fallback_upper_bounds);
}

// Grid coordinates for one component: L, L + h, ..., not exceeding U.
inline std::vector<double> grid_axis(double lower, double upper, double increment) {
  const auto steps = static_cast<std::size_t>(std::floor((upper - lower) / increment + 1e-9));
  std::vector<double> axis(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    axis[i] = std::min(upper, lower + static_cast<double>(i) * increment);
  }
  return axis;
}

}  // namespace detail

/// Number of points in the row-major grid over `bounds` at `increment`.
inline double grid_cell_count(const ComponentBounds& bounds, double increment) {
  double cells = 1.0;
  for (std::size_t p = 0; p < bounds.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    cells *= std::floor((bounds.upper()[i] - bounds.lower()[i]) / increment + 1e-9) + 1.0;
  }
  return cells;
}

/// Calls visit(x) for every grid point in row-major order (last component
/// fastest).
template <typename Visitor>
void for_each_grid_point(const ComponentBounds& bounds, double increment, double max_cells, Visitor&& visit) {
  if (!(increment > 0.0)) throw ValidationError("increment", "grid increment must be > 0");
  const double cells = grid_cell_count(bounds, increment);
  if (cells > max_cells) {
    throw ValidationError("increment", "grid has " + std::to_string(cells) + " points, above the cap of " +
                                           std::to_string(max_cells) + "; use a coarser increment");
  }
  const std::size_t P = bounds.size();
  std::vector<std::vector<double>> axes(P);
  for (std::size_t p = 0; p < P; ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    axes[p] = detail::grid_axis(bounds.lower()[i], bounds.upper()[i], increment);
  }
  std::vector<std::size_t> idx(P, 0);
  Vector x(static_cast<Eigen::Index>(P));
  for (std::size_t p = 0; p < P; ++p) x[static_cast<Eigen::Index>(p)] = axes[p][0];
  while (true) {
    visit(static_cast<const Vector&>(x));
    std::size_t p = P;
    while (p > 0) {
      --p;
      if (++idx[p] < axes[p].size()) {
        x[static_cast<Eigen::Index>(p)] = axes[p][idx[p]];
        break;
      }
      idx[p] = 0;
      x[static_cast<Eigen::Index>(p)] = axes[p][0];
      if (p == 0) return;
    }
  }
}

/// Cost-efficiency ranking for a linear cost: raise components in decreasing
/// beta1p / c_p order until the target is met. Components with beta1p <= 0
/// stay at their lower bound.
inline Recommendation recommend_linear(const ParameterVector& beta, const CenterCovariates& z,
                                       const ComponentBounds& bounds, const CostFunction& cf,
                                       const TargetSpec& target, LinkFunction link) {
  detail::check_problem(beta, z, bounds, cf, target, link);
  if (cf.kind() != CostKind::linear) throw ValidationError("cost", "linear ranking needs a linear cost");
  const std::size_t P = beta.components();
  const double eta_target = link.link(target.theta);

  Vector x = bounds.lower();
  double eta = linear_predictor(beta, x, z.values());
  if (eta >= eta_target) {
    return detail::finish(beta, z, cf, link, InterventionPackage(x), true, OptimizerMethod::linear_ranking);
  }

  std::vector<std::size_t> order;
  for (std::size_t p = 0; p < P; ++p) {
    if (beta.effects[static_cast<Eigen::Index>(p)] > 0.0) order.push_back(p);
  }
  // stable_sort keeps the lower index first on equal efficiency.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
    return beta.effects[ia] / cf.unit_costs()[ia] > beta.effects[ib] / cf.unit_costs()[ib];
  });

  for (std::size_t p : order) {
    const auto i = static_cast<Eigen::Index>(p);
    const double slope = beta.effects[i];
    const double needed = (eta_target - eta) / slope;
    if (bounds.lower()[i] + needed <= bounds.upper()[i]) {
      x[i] = bounds.lower()[i] + needed;
      return detail::finish(beta, z, cf, link, InterventionPackage(x), true, OptimizerMethod::linear_ranking);
    }
    x[i] = bounds.upper()[i];
    eta += slope * (bounds.upper()[i] - bounds.lower()[i]);
  }
  return detail::fallback(beta, z, bounds, cf, link);
}

/// Minimum-cost grid point whose mean reaches the target. Ties go to the
/// lexicographically smallest package.
///
/// The cost is separable, so for each prefix (x_1..x_{P-1}) the best last
/// coordinate is read from a running minimum over the feasible half-line
/// instead of enumerating it.
inline Recommendation recommend_grid(const ParameterVector& beta, const CenterCovariates& z,
                                     const ComponentBounds& bounds, const CostFunction& cf,
                                     const TargetSpec& target, LinkFunction link, const GridOptions& grid = {}) {
  detail::check_problem(beta, z, bounds, cf, target, link);
  if (!(grid.increment > 0.0)) throw ValidationError("increment", "grid increment must be > 0");
  const double cells = grid_cell_count(bounds, grid.increment);
  if (cells > grid.max_cells) {
    throw ValidationError("increment", "grid has " + std::to_string(cells) + " points, above the cap of " +
                                           std::to_string(grid.max_cells) + "; use a coarser increment");
  }
  const std::size_t P = beta.components();
  const std::size_t last = P - 1;
  const auto il = static_cast<Eigen::Index>(last);
  const double eta_target = link.link(target.theta);
  const double base = beta.intercept + beta.covariate_effects.dot(z.values());

  std::vector<std::vector<double>> axes(P);
  for (std::size_t p = 0; p < P; ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    axes[p] = detail::grid_axis(bounds.lower()[i], bounds.upper()[i], grid.increment);
  }
  const auto& tail_axis = axes[last];
  const std::size_t m = tail_axis.size();
  const double slope = beta.effects[il];

  // best_from[i]: argmin cost over tail indices >= i (smallest index on ties);
  // best_upto[i]: argmin over indices <= i.
  std::vector<double> tail_cost(m);
  for (std::size_t i = 0; i < m; ++i) tail_cost[i] = cf.component_cost(last, tail_axis[i]);
  std::vector<std::size_t> best_from(m), best_upto(m);
  best_from[m - 1] = m - 1;
  for (std::size_t i = m - 1; i-- > 0;) {
    best_from[i] = tail_cost[i] <= tail_cost[best_from[i + 1]] ? i : best_from[i + 1];
  }
  best_upto[0] = 0;
  for (std::size_t i = 1; i < m; ++i) {
    best_upto[i] = tail_cost[i] < tail_cost[best_upto[i - 1]] ? i : best_upto[i - 1];
  }

  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_prefix;
  std::size_t best_tail = 0;

  std::vector<std::size_t> idx(last, 0);
  while (true) {
    double eta = base;
    double prefix_cost = cf.constant();
    for (std::size_t p = 0; p < last; ++p) {
      const double v = axes[p][idx[p]];
      eta += beta.effects[static_cast<Eigen::Index>(p)] * v;
      prefix_cost += cf.component_cost(p, v);
    }
    auto feasible = [&](std::size_t i) { return link.inverse(eta + slope * tail_axis[i]) >= target.theta; };
    std::optional<std::size_t> pick;
    if (slope > 0.0) {
      // First feasible index, located from the closed form then corrected
      // against the exact comparison.
      const double guess = (eta_target - eta) / slope;
      std::size_t i = 0;
      if (guess > tail_axis[0]) {
        const double k = std::ceil((guess - tail_axis[0]) / grid.increment);
        i = k >= static_cast<double>(m) ? m : static_cast<std::size_t>(std::max(0.0, k));
      }
      while (i > 0 && feasible(i - 1)) --i;
      while (i < m && !feasible(i)) ++i;
      if (i < m) pick = best_from[i];
    } else if (slope < 0.0) {
      std::size_t i = m;
      const double guess = (eta_target - eta) / slope;  // feasible for x <= guess
      if (guess < tail_axis[m - 1]) {
        const double k = std::floor((guess - tail_axis[0]) / grid.increment);
        i = k < 0.0 ? 0 : std::min(m, static_cast<std::size_t>(k) + 1);
      }
      while (i < m && feasible(i)) ++i;
      while (i > 0 && !feasible(i - 1)) --i;
      if (i > 0) pick = best_upto[i - 1];
    } else if (feasible(0)) {
      pick = best_upto[m - 1];
    }
    if (pick) {
      const double c = prefix_cost + tail_cost[*pick];
      if (c < best_cost) {
        best_cost = c;
        best_prefix = idx;
        best_tail = *pick;
      }
    }
    std::size_t p = last;
    bool done = true;
    while (p > 0) {
      --p;
      if (++idx[p] < axes[p].size()) {
        done = false;
        break;
      }
      idx[p] = 0;
    }
    if (done) break;
  }

  if (!std::isfinite(best_cost)) return detail::fallback(beta, z, bounds, cf, link);
  Vector x(static_cast<Eigen::Index>(P));
  for (std::size_t p = 0; p < last; ++p) x[static_cast<Eigen::Index>(p)] = axes[p][best_prefix[p]];
  x[il] = tail_axis[best_tail];
  return detail::finish(beta, z, cf, link, InterventionPackage(x), true, OptimizerMethod::grid_search);
}

/// Linear costs use the ranking algorithm, everything else the grid.
inline Recommendation recommend(const ParameterVector& beta, const CenterCovariates& z,
                                const ComponentBounds& bounds, const CostFunction& cf,
                                const TargetSpec& target, LinkFunction link, const GridOptions& grid = {}) {
  if (cf.kind() == CostKind::linear) return recommend_linear(beta, z, bounds, cf, target, link);
  return recommend_grid(beta, z, bounds, cf, target, link, grid);
}

/// Power of a two-sided two-sample z test with `planned_n_per_arm` per arm
/// for the effect (projected mean - control mean), using the fit's residual
/// variance. The control mean is the fitted mean at the zero package.
inline double project_power(const FitResult& fit, const Recommendation& candidate,
                            std::size_t planned_n_per_arm, double alpha) {
  if (planned_n_per_arm < 2) throw ValidationError("planned_n_per_arm", "must be >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha", "must be in (0, 1)");
  if (!(fit.residual_variance > 0.0)) {
    throw Error("residual variance estimate is not positive; power is undefined");
  }
  const double control_mean = mean_response(
      fit.link, fit.beta_hat, InterventionPackage::zeros(fit.components()), candidate.covariates);
  const double effect = std::abs(candidate.projected_mean - control_mean);
  const double se = std::sqrt(fit.residual_variance * 2.0 / static_cast<double>(planned_n_per_arm));
  const double crit = dist::normal_quantile(1.0 - alpha / 2.0);
  return dist::normal_cdf(effect / se - crit) + dist::normal_cdf(-effect / se - crit);
}

struct PowerTarget {
  double power = 0.9;
  double alpha = 0.05;
  std::size_t planned_n_per_arm = 50;
};

/// Cheapest package that reaches theta and, if possible, the target power:
/// the mean target is raised (moving further along the cost-efficiency
/// order) until the projected power is met or the bounds are exhausted.
inline Recommendation recommend_powered(const FitResult& fit, const CenterCovariates& z,
                                        const ComponentBounds& bounds, const CostFunction& cf,
                                        const TargetSpec& target, const PowerTarget& power,
                                        const GridOptions& grid = {}) {
  const auto& beta = fit.beta_hat;
  const LinkFunction link = fit.link;
  auto base = recommend(beta, z, bounds, cf, target, link, grid);
  if (!base.feasible || project_power(fit, base, power.planned_n_per_arm, power.alpha) >= power.power) {
    return base;
  }
  // Highest mean the box can reach along the ranking (components with a
  // positive effect at their upper bound).
  Vector top = bounds.lower();
  for (std::size_t p = 0; p < beta.components(); ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    if (beta.effects[i] > 0.0) top[i] = bounds.upper()[i];
  }
  const double top_mean = mean_response(link, beta, InterventionPackage(top), z);
  auto at = [&](double theta) {
    TargetSpec t{theta};
    return recommend(beta, z, bounds, cf, t, link, grid);
  };
  auto top_rec = detail::finish(beta, z, cf, link, InterventionPackage(top), true, base.method);
  if (project_power(fit, top_rec, power.planned_n_per_arm, power.alpha) < power.power ||
      !(top_mean > target.theta)) {
    return top_rec;
  }
  double lo = target.theta, hi = top_mean;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto r = at(mid);
    if (r.feasible && project_power(fit, r, power.planned_n_per_arm, power.alpha) >= power.power) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  auto r = at(hi);
  return r.feasible ? r : top_rec;
}

}  // namespace lago
