#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "lago/dataset.hpp"
#include "lago/distributions.hpp"
#include "lago/error.hpp"
#include "lago/link.hpp"
#include "lago/model.hpp"

namespace lago {

struct FitOptions {
  bool intercept = true;      // false fixes beta0 at 0
  double tolerance = 1e-10;   // on the max-norm of U(beta)
  int max_iterations = 100;
  int max_halvings = 30;
  double max_condition = 1e12;
};

/// Solution of the estimating equations with its sandwich covariance.
struct FitResult {
  LinkFunction link;
  ParameterVector beta_hat;
  Matrix covariance;  // J^-1 V J^-1 / n, full (1+P+Q) square; zero row/col for a fixed intercept
  std::size_t n_total = 0;
  bool converged = false;
  int iterations = 0;
  double final_residual_norm = 0.0;  // max-norm of U at beta_hat
  bool has_intercept = true;
  double residual_variance = 0.0;  // sum of squared residuals / (n - free parameters)

  std::size_t components() const noexcept { return beta_hat.components(); }
  std::size_t covariates() const noexcept { return beta_hat.covariates(); }
  std::size_t dimension() const noexcept { return beta_hat.dimension(); }
  std::size_t free_parameters() const noexcept { return dimension() - (has_intercept ? 0 : 1); }

  Vector standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

enum class TestKind { wald_chisq, two_sample_z, adjusted_gamma };

inline std::string_view to_string(TestKind kind) {
  switch (kind) {
    case TestKind::wald_chisq: return "wald_chisq";
    case TestKind::two_sample_z: return "two_sample_z";
    case TestKind::adjusted_gamma: return "adjusted_gamma";
  }
  return "unknown";
}

struct TestResult {
  double statistic = 0.0;
  int df = 1;
  double p_value = 1.0;
  TestKind kind = TestKind::wald_chisq;
};

namespace detail {

// Rows sharing a design vector contribute identically apart from their
// outcome, so the solver works on runs of identical consecutive rows.
struct DesignGroup {
  Vector row;  // free coordinates of (1, a, z)
  double count = 0.0;
  double sum_y = 0.0;
  std::vector<double> ys;
};

struct Design {
  std::vector<DesignGroup> groups;
  std::vector<std::string> column_names;  // free columns
  std::size_t n = 0;
  std::size_t P = 0;
  std::size_t Q = 0;
  bool intercept = true;

  Eigen::Index free_dim() const { return static_cast<Eigen::Index>(column_names.size()); }

  Vector embed(const Vector& free) const {
    Vector full = Vector::Zero(static_cast<Eigen::Index>(1 + P + Q));
    if (intercept) {
      full = free;
    } else {
      full.tail(free.size()) = free;
    }
    return full;
  }

  Matrix embed(const Matrix& free) const {
    const auto d = static_cast<Eigen::Index>(1 + P + Q);
    Matrix full = Matrix::Zero(d, d);
    if (intercept) {
      full = free;
    } else {
      full.bottomRightCorner(free.rows(), free.cols()) = free;
    }
    return full;
  }
};

inline Design build_design(const TrialDataset& data, bool intercept) {
  Design d;
  d.P = data.components();
  d.Q = data.covariates();
  d.intercept = intercept;
  d.n = data.size();
  if (intercept) d.column_names.emplace_back("intercept");
  for (std::size_t p = 0; p < d.P; ++p) d.column_names.push_back("a_" + std::to_string(p + 1));
  for (std::size_t q = 0; q < d.Q; ++q) d.column_names.push_back("z_" + std::to_string(q + 1));

  const Eigen::Index dim = d.free_dim();
  for (const auto& r : data.rows()) {
    Vector row(dim);
    Eigen::Index k = 0;
    if (intercept) row[k++] = 1.0;
    row.segment(k, r.a.size()) = r.a;
    k += r.a.size();
    row.segment(k, r.z.size()) = r.z;
    if (d.groups.empty() || d.groups.back().row != row) {
      d.groups.push_back(DesignGroup{std::move(row), 0.0, 0.0, {}});
    }
    auto& g = d.groups.back();
    g.count += 1.0;
    g.sum_y += r.y;
    g.ys.push_back(r.y);
  }
  return d;
}

inline void check_rank(const Design& d) {
  const Eigen::Index dim = d.free_dim();
  if (d.n <= static_cast<std::size_t>(dim)) {
    throw RankDeficiencyError("need more observations than parameters: n = " + std::to_string(d.n) +
                              ", parameters = " + std::to_string(dim));
  }
  // Column-pivoted QR on the distinct design rows weighted by sqrt(count);
  // spans the same column space as the full design.
  Matrix X(static_cast<Eigen::Index>(d.groups.size()), dim);
  for (std::size_t g = 0; g < d.groups.size(); ++g) {
    X.row(static_cast<Eigen::Index>(g)) = d.groups[g].row.transpose() * std::sqrt(d.groups[g].count);
  }
  Vector scale = X.colwise().norm();
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (scale[j] == 0.0) {
      throw RankDeficiencyError("design column " + d.column_names[static_cast<std::size_t>(j)] +
                                " is identically zero");
    }
  }
  X = X * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < dim) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < dim; ++j) {
      if (!names.empty()) names += ", ";
      names += d.column_names[static_cast<std::size_t>(perm[j])];
    }
    throw RankDeficiencyError("design is rank deficient; collinear column(s): " + names);
  }
}

struct Evaluation {
  Vector U;         // (1/n) sum d_i (y_i - mu_i)
  Matrix jacobian;  // dU/dbeta
  double max_norm = 0.0;
};

inline Evaluation evaluate(const Design& d, LinkFunction link, const Vector& beta, bool with_jacobian) {
  const Eigen::Index dim = d.free_dim();
  Evaluation e;
  e.U = Vector::Zero(dim);
  if (with_jacobian) e.jacobian = Matrix::Zero(dim, dim);
  const double inv_n = 1.0 / static_cast<double>(d.n);
  for (const auto& g : d.groups) {
    const double eta = g.row.dot(beta);
    const double mu = link.inverse(eta);
    const double d1 = link.inverse_d1(eta);
    const double resid_sum = g.sum_y - g.count * mu;
    e.U.noalias() += (d1 * resid_sum * inv_n) * g.row;
    if (with_jacobian) {
      const double w = (link.inverse_d2(eta) * resid_sum - g.count * d1 * d1) * inv_n;
      e.jacobian.selfadjointView<Eigen::Lower>().rankUpdate(g.row, w);
    }
  }
  if (with_jacobian) e.jacobian = e.jacobian.selfadjointView<Eigen::Lower>();
  e.max_norm = e.U.size() ? e.U.cwiseAbs().maxCoeff() : 0.0;
  return e;
}

inline bool finite_norm(double v) { return std::isfinite(v); }

// Inverse of a symmetric positive definite matrix, retrying once with a small
// diagonal jitter before giving up.
inline Matrix spd_inverse(const Matrix& A, const std::vector<std::string>& names) {
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) {
    Matrix jittered = A;
    jittered.diagonal().array() += 1e-10 * A.trace();
    llt.compute(jittered);
    if (llt.info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(A);
      Eigen::Index worst = 0;
      es.eigenvalues().minCoeff(&worst);
      const Vector v = es.eigenvectors().col(worst);
      std::string cols;
      for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (std::abs(v[j]) > 0.1) {
          if (!cols.empty()) cols += ", ";
          cols += names[static_cast<std::size_t>(j)];
        }
      }
      throw RankDeficiencyError("information matrix is singular; collinear column(s): " + cols);
    }
  }
  return llt.solve(Matrix::Identity(A.rows(), A.cols()));
}

}  // namespace detail

/// U(beta) for the full stacked parameter vector (the intercept entry is
/// ignored when `intercept` is false).
inline Vector estimating_function(const TrialDataset& data, LinkFunction link,
                                  const ParameterVector& beta, bool intercept = true) {
  const auto d = detail::build_design(data, intercept);
  Vector full = beta.stacked();
  Vector free = intercept ? full : Vector(full.tail(full.size() - 1));
  return d.embed(detail::evaluate(d, link, free, false).U);
}

/// Solves U(beta) = 0 by damped Newton and computes the plug-in sandwich
/// covariance J^-1 V J^-1 / n.
///
/// Throws RankDeficiencyError when the design cannot identify beta and
/// ConvergenceError when Newton stalls; the latter names the last iterate.
inline FitResult fit_gee(const TrialDataset& data, LinkFunction link, const FitOptions& options = {}) {
  if (data.empty()) throw ValidationError("data", "dataset is empty");
  const auto design = detail::build_design(data, options.intercept);
  detail::check_rank(design);
  const Eigen::Index dim = design.free_dim();

  Vector beta = Vector::Zero(dim);
  auto eval = detail::evaluate(design, link, beta, true);
  int iter = 0;
  bool converged = eval.max_norm <= options.tolerance;
  while (!converged && iter < options.max_iterations) {
    ++iter;
    const double merit = eval.U.squaredNorm();
    // Newton direction from the full Jacobian, falling back to Fisher scoring
    // (the expected Jacobian) when the full one gives no decrease.
    bool stepped = false;
    for (int attempt = 0; attempt < 2 && !stepped; ++attempt) {
      Matrix H = eval.jacobian;
      if (attempt == 1) {
        H = Matrix::Zero(dim, dim);
        for (const auto& g : design.groups) {
          const double d1 = link.inverse_d1(g.row.dot(beta));
          H.selfadjointView<Eigen::Lower>().rankUpdate(g.row, -g.count * d1 * d1 /
                                                                  static_cast<double>(design.n));
        }
        H = H.selfadjointView<Eigen::Lower>();
      }
      Eigen::FullPivLU<Matrix> lu(H);
      if (!lu.isInvertible()) continue;
      const Vector step = -lu.solve(eval.U);
      if (!step.allFinite()) continue;
      double t = 1.0;
      for (int h = 0; h <= options.max_halvings; ++h, t *= 0.5) {
        Vector trial = beta + t * step;
        auto trial_eval = detail::evaluate(design, link, trial, true);
        if (detail::finite_norm(trial_eval.max_norm) && trial_eval.U.squaredNorm() < merit) {
          beta = std::move(trial);
          eval = std::move(trial_eval);
          stepped = true;
          break;
        }
      }
    }
    if (!stepped) break;
    converged = eval.max_norm <= options.tolerance;
  }
  if (!converged) {
    std::string last;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      last += (j ? ", " : "") + std::to_string(beta[j]);
    }
    throw ConvergenceError("estimating equations did not converge after " + std::to_string(iter) +
                           " iterations; last beta = (" + last + "), max |U| = " +
                           std::to_string(eval.max_norm));
  }

  // Plug-in J and V at beta_hat, with V built from per-observation squared residuals.
  const double inv_n = 1.0 / static_cast<double>(design.n);
  Matrix J = Matrix::Zero(dim, dim);
  Matrix V = Matrix::Zero(dim, dim);
  double rss = 0.0;
  for (const auto& g : design.groups) {
    const double eta = g.row.dot(beta);
    const double mu = link.inverse(eta);
    const double d1 = link.inverse_d1(eta);
    double group_rss = 0.0;
    for (double y : g.ys) group_rss += (y - mu) * (y - mu);
    rss += group_rss;
    J.selfadjointView<Eigen::Lower>().rankUpdate(g.row, g.count * d1 * d1 * inv_n);
    V.selfadjointView<Eigen::Lower>().rankUpdate(g.row, d1 * d1 * group_rss * inv_n);
  }
  J = J.selfadjointView<Eigen::Lower>();
  V = V.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Matrix> es(J, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > options.max_condition) {
    // Still attempt the inverse so the error names the offending columns.
    detail::spd_inverse(J, design.column_names);
    throw RankDeficiencyError("information matrix is ill-conditioned (condition number " +
                              std::to_string(lo > 0.0 ? hi / lo : INFINITY) + ")");
  }
  const Matrix J_inv = detail::spd_inverse(J, design.column_names);
  Matrix cov = J_inv * V * J_inv * inv_n;
  cov = 0.5 * (cov + cov.transpose()).eval();

  FitResult fit;
  fit.link = link;
  fit.beta_hat = ParameterVector::from_stacked(design.embed(beta), design.P, design.Q);
  fit.covariance = design.embed(cov);
  fit.n_total = design.n;
  fit.converged = true;
  fit.iterations = iter;
  fit.final_residual_norm = eval.max_norm;
  fit.has_intercept = options.intercept;
  fit.residual_variance = rss / static_cast<double>(design.n - static_cast<std::size_t>(dim));
  return fit;
}

/// Wald chi-squared test of beta1[indices] = 0 (indices are 0-based
/// component positions).
inline TestResult wald_component_test(const FitResult& fit, const std::set<std::size_t>& component_indices) {
  if (component_indices.empty()) throw ValidationError("indices", "at least one component is required");
  const auto m = static_cast<Eigen::Index>(component_indices.size());
  Vector b(m);
  Matrix S(m, m);
  std::vector<Eigen::Index> pos;
  for (auto p : component_indices) {
    if (p >= fit.components()) {
      throw ValidationError("indices", "component index " + std::to_string(p) + " out of range");
    }
    pos.push_back(static_cast<Eigen::Index>(1 + p));
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    b[i] = fit.beta_hat.effects[pos[static_cast<std::size_t>(i)] - 1];
    for (Eigen::Index j = 0; j < m; ++j) {
      S(i, j) = fit.covariance(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
    }
  }
  Eigen::LDLT<Matrix> ldlt(S);
  const double scale = std::max(S.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * scale) {
    throw Error("covariance block for the tested components is singular");
  }
  TestResult r;
  r.kind = TestKind::wald_chisq;
  r.df = static_cast<int>(m);
  r.statistic = b.dot(ldlt.solve(b));
  r.p_value = dist::chi_squared_sf(r.statistic, r.df);
  return r;
}

inline TestResult wald_component_test(const FitResult& fit) {
  std::set<std::size_t> all;
  for (std::size_t p = 0; p < fit.components(); ++p) all.insert(p);
  return wald_component_test(fit, all);
}

/// Arm means and the Welch standard error of their difference.
struct ArmComparison {
  double mean_intervention = 0.0;
  double mean_control = 0.0;
  double var_intervention = 0.0;  // sample variances (n - 1 denominators)
  double var_control = 0.0;
  std::size_t n_intervention = 0;
  std::size_t n_control = 0;

  double difference() const { return mean_intervention - mean_control; }
  double standard_error() const {
    return std::sqrt(var_intervention / static_cast<double>(n_intervention) +
                     var_control / static_cast<double>(n_control));
  }
};

inline ArmComparison compare_arms(const TrialDataset& data) {
  double s[2] = {0.0, 0.0};
  std::size_t n[2] = {0, 0};
  for (const auto& r : data.rows()) {
    const int k = r.arm == Arm::intervention ? 0 : 1;
    s[k] += r.y;
    ++n[k];
  }
  if (n[0] < 2 || n[1] < 2) {
    throw ValidationError("arm", "two-sample comparison needs at least two rows in each arm (intervention " +
                                     std::to_string(n[0]) + ", control " + std::to_string(n[1]) + ")");
  }
  const double m[2] = {s[0] / static_cast<double>(n[0]), s[1] / static_cast<double>(n[1])};
  double ss[2] = {0.0, 0.0};
  for (const auto& r : data.rows()) {
    const int k = r.arm == Arm::intervention ? 0 : 1;
    ss[k] += (r.y - m[k]) * (r.y - m[k]);
  }
  ArmComparison c;
  c.mean_intervention = m[0];
  c.mean_control = m[1];
  c.var_intervention = ss[0] / static_cast<double>(n[0] - 1);
  c.var_control = ss[1] / static_cast<double>(n[1] - 1);
  c.n_intervention = n[0];
  c.n_control = n[1];
  return c;
}

/// Welch z test of equal arm means, pooled across stages; two-sided.
inline TestResult two_sample_means_test(const TrialDataset& data) {
  const auto c = compare_arms(data);
  TestResult r;
  r.kind = TestKind::two_sample_z;
  r.df = 1;
  const double diff = c.difference();
  const double se = c.standard_error();
  if (diff == 0.0) {
    r.statistic = 0.0;
  } else if (se == 0.0) {
    r.statistic = diff > 0 ? INFINITY : -INFINITY;
  } else {
    r.statistic = diff / se;
  }
  r.p_value = dist::two_sided_normal_p(r.statistic);
  return r;
}

/// Wald test of gamma = 0 in g(E[Y]) = beta0 + beta2'z + gamma R, where R
/// indicates the intervention arm.
inline TestResult adjusted_group_test(const TrialDataset& data, LinkFunction link,
                                      const FitOptions& options = {}) {
  if (data.arm_size(Arm::intervention) == 0 || data.arm_size(Arm::control) == 0) {
    throw ValidationError("arm", "adjusted group test needs both arms");
  }
  TrialDataset grouped(1, data.covariates());
  for (const auto& r : data.rows()) {
    TrialRow g = r;
    g.a = Vector::Constant(1, r.arm == Arm::intervention ? 1.0 : 0.0);
    // The indicator lives in the package slot; keep arm labels consistent with it.
    grouped.add(std::move(g));
  }
  const auto fit = fit_gee(grouped, link, options);
  auto r = wald_component_test(fit, {0});
  r.kind = TestKind::adjusted_gamma;
  return r;
}

}  // namespace lago
