#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lago/error.hpp"
#include "lago/link.hpp"

namespace lago {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline Vector to_vector(const std::vector<double>& values) {
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace detail

/// Doses of each intervention component (days, visit counts, ...).
class InterventionPackage {
 public:
  InterventionPackage() = default;
  explicit InterventionPackage(Vector doses) : doses_(std::move(doses)) {
    if (!detail::all_finite(doses_)) throw ValidationError("package", "doses must be finite");
  }
  InterventionPackage(std::initializer_list<double> doses)
      : InterventionPackage(detail::to_vector(std::vector<double>(doses))) {}

  static InterventionPackage zeros(std::size_t components) {
    return InterventionPackage(Vector::Zero(static_cast<Eigen::Index>(components)));
  }

  const Vector& doses() const noexcept { return doses_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(doses_.size()); }
  double operator[](std::size_t p) const { return doses_[static_cast<Eigen::Index>(p)]; }

  bool is_zero() const { return (doses_.array() == 0.0).all(); }

  friend bool operator==(const InterventionPackage& a, const InterventionPackage& b) {
    return a.doses_.size() == b.doses_.size() && a.doses_ == b.doses_;
  }

 private:
  Vector doses_;
};

/// Per-component dose box [L_p, U_p].
class ComponentBounds {
 public:
  ComponentBounds() = default;
  ComponentBounds(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size()) {
      throw DimensionError("bounds: upper", static_cast<std::size_t>(lower_.size()),
                           static_cast<std::size_t>(upper_.size()));
    }
    if (lower_.size() == 0) throw ValidationError("bounds", "must have at least one component");
    for (Eigen::Index p = 0; p < lower_.size(); ++p) {
      const std::string where = "bounds[" + std::to_string(p) + "]";
      if (!std::isfinite(lower_[p]) || !std::isfinite(upper_[p])) {
        throw ValidationError(where, "bounds must be finite");
      }
      if (!(lower_[p] < upper_[p])) throw ValidationError(where, "lower must be < upper");
    }
  }

  const Vector& lower() const noexcept { return lower_; }
  const Vector& upper() const noexcept { return upper_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(lower_.size()); }

  bool contains(const InterventionPackage& x) const {
    if (x.size() != size()) return false;
    return (x.doses().array() >= lower_.array()).all() &&
           (x.doses().array() <= upper_.array()).all();
  }

  InterventionPackage clamp(const Vector& doses) const {
    check_size(doses.size());
    return InterventionPackage(doses.cwiseMax(lower_).cwiseMin(upper_));
  }

  void validate(const InterventionPackage& x) const {
    check_size(x.doses().size());
    for (std::size_t p = 0; p < size(); ++p) {
      const auto i = static_cast<Eigen::Index>(p);
      if (x[p] < lower_[i] || x[p] > upper_[i]) {
        throw ValidationError("package[" + std::to_string(p) + "]",
                              "dose " + std::to_string(x[p]) + " outside [" +
                                  std::to_string(lower_[i]) + ", " + std::to_string(upper_[i]) +
                                  "]");
      }
    }
  }

 private:
  void check_size(Eigen::Index n) const {
    if (static_cast<std::size_t>(n) != size()) {
      throw DimensionError("package vs bounds", size(), static_cast<std::size_t>(n));
    }
  }

  Vector lower_;
  Vector upper_;
};

/// Fixed center characteristics z. May be empty.
class CenterCovariates {
 public:
  CenterCovariates() = default;
  explicit CenterCovariates(Vector values) : values_(std::move(values)) {
    if (!detail::all_finite(values_)) throw ValidationError("covariates", "must be finite");
  }
  CenterCovariates(std::initializer_list<double> values)
      : CenterCovariates(detail::to_vector(std::vector<double>(values))) {}

  static CenterCovariates zeros(std::size_t q) {
    return CenterCovariates(Vector::Zero(static_cast<Eigen::Index>(q)));
  }

  const Vector& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }

  friend bool operator==(const CenterCovariates& a, const CenterCovariates& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Vector values_;
};

/// beta = (intercept, effects of the P components, effects of the Q covariates).
struct ParameterVector {
  double intercept = 0.0;
  Vector effects;
  Vector covariate_effects;

  ParameterVector() = default;
  ParameterVector(double b0, Vector b1, Vector b2)
      : intercept(b0), effects(std::move(b1)), covariate_effects(std::move(b2)) {}

  std::size_t components() const noexcept { return static_cast<std::size_t>(effects.size()); }
  std::size_t covariates() const noexcept {
    return static_cast<std::size_t>(covariate_effects.size());
  }
  std::size_t dimension() const noexcept { return 1 + components() + covariates(); }

  Vector stacked() const {
    Vector out(static_cast<Eigen::Index>(dimension()));
    out << intercept, effects, covariate_effects;
    return out;
  }

  static ParameterVector from_stacked(const Vector& v, std::size_t P, std::size_t Q) {
    if (static_cast<std::size_t>(v.size()) != 1 + P + Q) {
      throw DimensionError("stacked parameter vector", 1 + P + Q, static_cast<std::size_t>(v.size()));
    }
    return ParameterVector(v[0], v.segment(1, static_cast<Eigen::Index>(P)),
                           v.segment(1 + static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(Q)));
  }
};

/// The design row (1, x, z) that multiplies the stacked parameter vector.
inline Vector design_row(const Vector& x, const Vector& z) {
  Vector row(1 + x.size() + z.size());
  row << 1.0, x, z;
  return row;
}

inline double linear_predictor(const ParameterVector& beta, const Vector& x, const Vector& z) {
  if (static_cast<std::size_t>(x.size()) != beta.components()) {
    throw DimensionError("package length", beta.components(), static_cast<std::size_t>(x.size()));
  }
  if (static_cast<std::size_t>(z.size()) != beta.covariates()) {
    throw DimensionError("covariate length", beta.covariates(), static_cast<std::size_t>(z.size()));
  }
  return beta.intercept + beta.effects.dot(x) + beta.covariate_effects.dot(z);
}

/// g^{-1}(beta0 + beta1'x + beta2'z).
inline double mean_response(LinkFunction link, const ParameterVector& beta,
                            const InterventionPackage& x, const CenterCovariates& z) {
  return link.inverse(linear_predictor(beta, x.doses(), z.values()));
}

enum class CostKind { linear, cubic };

/// Separable polynomial cost in dollars.
///
/// Linear: fixed + sum_p c_p x_p.
/// Cubic: constant + sum_p (d_p + c_p x_p + b_p x_p^2 + a_p x_p^3); the
/// coefficient matrix has one row per component laid out as (a, b, c, d).
class CostFunction {
 public:
  static CostFunction linear(Vector unit_costs, double fixed_cost = 0.0) {
    if (unit_costs.size() == 0) throw ValidationError("cost.unit_costs", "must be non-empty");
    for (Eigen::Index p = 0; p < unit_costs.size(); ++p) {
      if (!(unit_costs[p] > 0.0) || !std::isfinite(unit_costs[p])) {
        throw ValidationError("cost.unit_costs[" + std::to_string(p) + "]",
                              "unit costs must be finite and > 0");
      }
    }
    if (!std::isfinite(fixed_cost)) throw ValidationError("cost.fixed", "must be finite");
    CostFunction cf;
    cf.kind_ = CostKind::linear;
    cf.constant_ = fixed_cost;
    cf.unit_costs_ = std::move(unit_costs);
    return cf;
  }

  static CostFunction cubic(Matrix coefficients, double constant = 0.0) {
    if (coefficients.cols() != 4 || coefficients.rows() == 0) {
      throw ValidationError("cost.coefficients", "cubic cost needs one (a, b, c, d) row per component");
    }
    if (!coefficients.allFinite() || !std::isfinite(constant)) {
      throw ValidationError("cost.coefficients", "must be finite");
    }
    CostFunction cf;
    cf.kind_ = CostKind::cubic;
    cf.constant_ = constant;
    cf.cubic_ = std::move(coefficients);
    return cf;
  }

  CostKind kind() const noexcept { return kind_; }
  double constant() const noexcept { return constant_; }
  const Vector& unit_costs() const noexcept { return unit_costs_; }
  const Matrix& cubic_coefficients() const noexcept { return cubic_; }

  std::size_t components() const noexcept {
    return static_cast<std::size_t>(kind_ == CostKind::linear ? unit_costs_.size() : cubic_.rows());
  }

  /// Cost contributed by component p at dose x (excluding the constant).
  double component_cost(std::size_t p, double x) const {
    const auto i = static_cast<Eigen::Index>(p);
    if (kind_ == CostKind::linear) return unit_costs_[i] * x;
    const double a = cubic_(i, 0), b = cubic_(i, 1), c = cubic_(i, 2), d = cubic_(i, 3);
    return ((a * x + b) * x + c) * x + d;
  }

  double operator()(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != components()) {
      throw DimensionError("cost: package length", components(), static_cast<std::size_t>(x.size()));
    }
    double total = constant_;
    for (std::size_t p = 0; p < components(); ++p) {
      total += component_cost(p, x[static_cast<Eigen::Index>(p)]);
    }
    return total;
  }

 private:
  CostFunction() = default;

  CostKind kind_ = CostKind::linear;
  double constant_ = 0.0;
  Vector unit_costs_;
  Matrix cubic_;
};

inline double cost(const CostFunction& cf, const InterventionPackage& x) { return cf(x.doses()); }

/// Absolute target for the mean outcome.
struct TargetSpec {
  double theta = 0.0;

  void validate(LinkFunction link) const {
    if (!std::isfinite(theta)) throw ValidationError("theta", "must be finite");
    if (!link.in_range(theta)) {
      throw ValidationError("theta", "target " + std::to_string(theta) + " is outside the range of the " +
                                         std::string(to_string(link.kind())) + " link");
    }
  }
};

}  // namespace lago
