#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lago/dataset.hpp"
#include "lago/estimation.hpp"
#include "lago/inference.hpp"
#include "lago/model.hpp"
#include "lago/optimizer.hpp"

namespace lago {

enum class DesignKind { clago, uvlago, factorial, most };

inline std::string_view to_string(DesignKind k) {
  switch (k) {
    case DesignKind::clago: return "clago";
    case DesignKind::uvlago: return "uvlago";
    case DesignKind::factorial: return "factorial";
    case DesignKind::most: return "most";
  }
  return "unknown";
}

inline DesignKind parse_design_kind(std::string_view s) {
  if (s == "clago") return DesignKind::clago;
  if (s == "uvlago") return DesignKind::uvlago;
  if (s == "factorial") return DesignKind::factorial;
  if (s == "most") return DesignKind::most;
  throw ValidationError("kind", "unknown design '" + std::string(s) + "' (expected clago, uvlago, factorial or most)");
}

/// Centers in one stage. In a factorial stage every center draws its package
/// uniformly from the factorial set and centers drawing the zero package
/// form the control arm; `control_centers` is then ignored.
struct StageSpec {
  int intervention_centers = 0;
  int control_centers = 0;
  int patients_per_center = 1;
  bool factorial = false;
};

struct CovariateSpec {
  enum class Kind { normal, empirical } kind = Kind::normal;
  double mean = 0.0;
  double sd = 1.0;
  std::vector<double> values;  // empirical draws, one covariate
};

/// Center-level multiplicative deviation from the assigned package: each
/// component is scaled by an independent U(low, high) draw, then clamped to
/// the bounds.
struct AdherenceSpec {
  double low = 1.0;
  double high = 1.0;
  bool initial_stage = false;  // applies to the fixed stage-1 package
  bool later_stages = false;   // applies to recommended packages

  bool identity() const { return low == 1.0 && high == 1.0; }
};

struct PowerSteering {
  bool enabled = false;
  PowerTarget target;
};

struct MostSpec {
  int optimization_n = 100;  // stage-1 factorial participants
  int rct_per_arm = 100;
};

struct DesignSpec {
  DesignKind kind = DesignKind::clago;
  LinkFunction link;
  ParameterVector beta;  // true coefficients
  bool fit_intercept = true;
  ComponentBounds bounds;
  CostFunction cost = CostFunction::linear(Vector::Ones(1));
  double theta = 0.0;
  double sigma = 1.0;
  std::vector<StageSpec> stages;
  Vector initial_package;
  std::vector<Vector> factorial_packages;
  CovariateSpec covariates;
  AdherenceSpec adherence;
  bool tailor_to_center = true;  // recommend at each center's z, or at evaluation_z
  Vector evaluation_z;           // z-tilde for metrics; zeros by default
  PowerSteering power;
  MostSpec most;
  double optimizer_increment = 0.01;
  double set_increment = 0.1;
  bool compute_sets = true;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int replications = 100;
  int threads = 0;  // 0: LAGO_THREADS or hardware concurrency

  std::size_t components() const { return beta.components(); }
  std::size_t covariate_count() const { return beta.covariates(); }
  CenterCovariates eval_z() const {
    return evaluation_z.size() == 0 ? CenterCovariates::zeros(covariate_count()) : CenterCovariates(evaluation_z);
  }

  void validate() const {
    const std::size_t P = components();
    if (P == 0) throw ValidationError("beta.effects", "need at least one component");
    if (bounds.size() != P) throw ValidationError("bounds", "expected " + std::to_string(P) + " components");
    if (cost.components() != P) throw ValidationError("cost", "expected " + std::to_string(P) + " components");
    TargetSpec{theta}.validate(link);
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma", "must be finite and >= 0");
    if (replications < 2) throw ValidationError("replications", "must be >= 2");
    if (adherence.low > adherence.high || adherence.low < 0.0) {
      throw ValidationError("adherence", "need 0 <= low <= high");
    }
    if (evaluation_z.size() != 0 && static_cast<std::size_t>(evaluation_z.size()) != covariate_count()) {
      throw ValidationError("evaluation_z", "expected " + std::to_string(covariate_count()) + " values");
    }
    if (covariates.kind == CovariateSpec::Kind::empirical) {
      if (covariates.values.empty()) throw ValidationError("covariates.values", "empirical list is empty");
      if (covariate_count() != 1) throw ValidationError("covariates", "empirical draws support one covariate");
    }
    for (const auto& f : factorial_packages) {
      if (static_cast<std::size_t>(f.size()) != P) {
        throw ValidationError("factorial_packages", "each package needs " + std::to_string(P) + " doses");
      }
      bounds.validate(InterventionPackage(f));
    }
    if (kind == DesignKind::most) {
      if (factorial_packages.empty()) throw ValidationError("factorial_packages", "MOST needs a factorial set");
      if (most.optimization_n < 1 || most.rct_per_arm < 2) {
        throw ValidationError("most", "optimization_n >= 1 and rct_per_arm >= 2 required");
      }
      return;
    }
    if (stages.empty()) throw ValidationError("stages", "need at least one stage");
    std::size_t total = 0;
    for (std::size_t k = 0; k < stages.size(); ++k) {
      const auto& s = stages[k];
      const std::string where = "stages[" + std::to_string(k) + "]";
      if (s.patients_per_center < 1) throw ValidationError(where + ".patients_per_center", "must be >= 1");
      if (s.intervention_centers < 0 || s.control_centers < 0) throw ValidationError(where, "negative center count");
      if (s.factorial && factorial_packages.empty()) {
        throw ValidationError("factorial_packages", where + " is factorial but no packages are given");
      }
      total += static_cast<std::size_t>(s.intervention_centers + s.control_centers) *
               static_cast<std::size_t>(s.patients_per_center);
    }
    if (total <= beta.dimension()) throw ValidationError("stages", "total sample size must exceed the parameter count");
    if (!stages[0].factorial) {
      if (static_cast<std::size_t>(initial_package.size()) != P) {
        throw ValidationError("initial_package", "expected " + std::to_string(P) + " doses");
      }
      bounds.validate(InterventionPackage(initial_package));
    }
  }
};

/// Everything one replication produced. Stage vectors are indexed by
/// cumulative stage (fit on stages 1..k).
struct ReplicationRecord {
  int index = 0;
  TrialDataset data;
  std::vector<FitResult> fits;
  std::vector<Recommendation> recommendations;  // at evaluation z, from fits[k]
  bool sets_computed = false;
  bool set_covers = false;
  double set_fraction = 0.0;
  bool bands_cover = false;
  TestResult wald;
  TestResult two_sample;
  std::optional<TestResult> adjusted;
  // MOST only.
  bool proceeded = true;
  Vector most_package;
  double most_true_mean = 0.0;    // true mean under the RCT package
  double most_true_effect = 0.0;  // true mean difference vs the zero package
  bool most_effect_covered = false;
};

namespace detail {

inline Vector draw_covariates(const DesignSpec& spec, std::mt19937_64& rng) {
  Vector z(static_cast<Eigen::Index>(spec.covariate_count()));
  if (spec.covariates.kind == CovariateSpec::Kind::empirical) {
    std::uniform_int_distribution<std::size_t> pick(0, spec.covariates.values.size() - 1);
    for (auto& v : z) v = spec.covariates.values[pick(rng)];
  } else {
    std::normal_distribution<double> n(spec.covariates.mean, spec.covariates.sd);
    for (auto& v : z) v = n(rng);
  }
  return z;
}

inline Vector adhere(const DesignSpec& spec, const Vector& assigned, std::mt19937_64& rng) {
  if (spec.adherence.identity()) return assigned;
  std::uniform_real_distribution<double> u(spec.adherence.low, spec.adherence.high);
  Vector out = assigned;
  for (auto& v : out) v *= u(rng);
  return spec.bounds.clamp(out).doses();
}

inline void add_center(TrialDataset& d, const DesignSpec& spec, int stage, const std::string& id, Arm arm,
                       const Vector& a, const Vector& z, int patients, std::mt19937_64& rng) {
  const double mu = spec.link.inverse(linear_predictor(spec.beta, a, z));
  std::normal_distribution<double> eps(0.0, 1.0);
  for (int i = 0; i < patients; ++i) {
    d.add({stage, id, arm, a, z, mu + spec.sigma * eps(rng)});
  }
}

inline void add_factorial_stage(TrialDataset& d, const DesignSpec& spec, int stage, int centers, int patients,
                                std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, spec.factorial_packages.size() - 1);
  for (int j = 0; j < centers; ++j) {
    const Vector& a = spec.factorial_packages[pick(rng)];
    const Vector z = draw_covariates(spec, rng);
    const bool zero = (a.array() == 0.0).all();
    add_center(d, spec, stage, "s" + std::to_string(stage) + "f" + std::to_string(j),
               zero ? Arm::control : Arm::intervention, a, z, patients, rng);
  }
}

inline Recommendation recommend_for(const DesignSpec& spec, const FitResult& fit, const CenterCovariates& z) {
  const ParameterVector& beta = fit.beta_hat;
  GridOptions grid;
  grid.increment = spec.optimizer_increment;
  if (spec.power.enabled) {
    return recommend_powered(fit, z, spec.bounds, spec.cost, TargetSpec{spec.theta}, spec.power.target, grid);
  }
  return recommend(beta, z, spec.bounds, spec.cost, TargetSpec{spec.theta}, spec.link, grid);
}

inline FitOptions fit_options(const DesignSpec& spec) {
  FitOptions o;
  o.intercept = spec.fit_intercept;
  return o;
}

inline void final_inference(const DesignSpec& spec, ReplicationRecord& rec, const Recommendation& truth) {
  const FitResult& fit = rec.fits.back();
  const CenterCovariates z = spec.eval_z();
  rec.wald = wald_component_test(fit);
  if (rec.data.arm_size(Arm::control) >= 2 && rec.data.arm_size(Arm::intervention) >= 2) {
    rec.two_sample = two_sample_means_test(rec.data);
  }
  if (!spec.compute_sets) return;
  rec.sets_computed = true;
  // Coverage of the confidence set: theta lies in the interval at the true optimum.
  rec.set_covers = mean_ci(fit, truth.package, z, 1.0 - spec.alpha).contains(spec.theta);
  const auto cs = confidence_set(fit, spec.bounds, z, TargetSpec{spec.theta}, spec.set_increment, 1.0 - spec.alpha);
  rec.set_fraction = cs.set_percentage();
  const auto cb = confidence_bands(fit, spec.bounds, z, spec.set_increment, 1.0 - spec.alpha);
  rec.bands_cover = std::all_of(cb.entries.begin(), cb.entries.end(), [&](const BandEntry& e) {
    const double mu = mean_response(spec.link, spec.beta, e.x, z);
    return e.band_lower <= mu && mu <= e.band_upper;
  });
}

}  // namespace detail

/// The optimum under the true coefficients at the evaluation covariates.
inline Recommendation true_optimum(const DesignSpec& spec) {
  GridOptions grid;
  grid.increment = spec.optimizer_increment;
  return recommend(spec.beta, spec.eval_z(), spec.bounds, spec.cost, TargetSpec{spec.theta}, spec.link, grid);
}

/// One multi-stage LAGO trial (c-LAGO or uv-LAGO). Stage k >= 2 uses the
/// recommendation from the fit on stages 1..k-1.
inline ReplicationRecord simulate_lago(const DesignSpec& spec, std::mt19937_64& rng,
                                       const Recommendation& truth) {
  ReplicationRecord rec;
  rec.data = TrialDataset(spec.components(), spec.covariate_count());
  const std::size_t P = spec.components();
  const FitOptions opt = detail::fit_options(spec);
  const CenterCovariates ez = spec.eval_z();
  for (std::size_t k = 0; k < spec.stages.size(); ++k) {
    const auto& st = spec.stages[k];
    const int stage = static_cast<int>(k) + 1;
    if (st.factorial) {
      detail::add_factorial_stage(rec.data, spec, stage, st.intervention_centers + st.control_centers,
                                  st.patients_per_center, rng);
    } else {
      std::optional<Recommendation> shared;
      if (k > 0 && !spec.tailor_to_center) shared = detail::recommend_for(spec, rec.fits.back(), ez);
      for (int j = 0; j < st.intervention_centers; ++j) {
        const Vector z = detail::draw_covariates(spec, rng);
        Vector a;
        if (k == 0) {
          a = spec.adherence.initial_stage ? detail::adhere(spec, spec.initial_package, rng) : spec.initial_package;
        } else {
          const Vector assigned = shared ? shared->package.doses()
                                         : detail::recommend_for(spec, rec.fits.back(), CenterCovariates(z))
                                               .package.doses();
          a = spec.adherence.later_stages ? detail::adhere(spec, assigned, rng) : assigned;
        }
        detail::add_center(rec.data, spec, stage, "s" + std::to_string(stage) + "i" + std::to_string(j),
                           Arm::intervention, a, z, st.patients_per_center, rng);
      }
      for (int j = 0; j < st.control_centers; ++j) {
        const Vector z = detail::draw_covariates(spec, rng);
        detail::add_center(rec.data, spec, stage, "s" + std::to_string(stage) + "c" + std::to_string(j),
                           Arm::control, Vector::Zero(static_cast<Eigen::Index>(P)), z, st.patients_per_center,
                           rng);
      }
    }
    rec.fits.push_back(fit_gee(rec.data, spec.link, opt));
    rec.recommendations.push_back(detail::recommend_for(spec, rec.fits.back(), ez));
  }
  rec.data.validate();
  detail::final_inference(spec, rec, truth);
  return rec;
}

/// Factorial trial: every stage assigns packages uniformly from the
/// factorial set.
inline ReplicationRecord simulate_factorial(const DesignSpec& spec, std::mt19937_64& rng,
                                            const Recommendation& truth) {
  ReplicationRecord rec;
  rec.data = TrialDataset(spec.components(), spec.covariate_count());
  const FitOptions opt = detail::fit_options(spec);
  for (std::size_t k = 0; k < spec.stages.size(); ++k) {
    const auto& st = spec.stages[k];
    detail::add_factorial_stage(rec.data, spec, static_cast<int>(k) + 1,
                                st.intervention_centers + st.control_centers, st.patients_per_center, rng);
    rec.fits.push_back(fit_gee(rec.data, spec.link, opt));
    rec.recommendations.push_back(detail::recommend_for(spec, rec.fits.back(), spec.eval_z()));
  }
  rec.data.validate();
  detail::final_inference(spec, rec, truth);
  return rec;
}

/// MOST: factorial optimization phase, then (if any estimated component
/// effect is positive) a two-arm RCT of the recommended package with the
/// non-positive components dropped. Only RCT outcomes enter the final test.
inline ReplicationRecord simulate_most(const DesignSpec& spec, std::mt19937_64& rng) {
  ReplicationRecord rec;
  const std::size_t P = spec.components();
  TrialDataset opt_data(P, spec.covariate_count());
  detail::add_factorial_stage(opt_data, spec, 1, spec.most.optimization_n, 1, rng);
  opt_data.validate();
  const FitResult fit = fit_gee(opt_data, spec.link, detail::fit_options(spec));
  rec.fits.push_back(fit);
  if (!(fit.beta_hat.effects.array() > 0.0).any()) {
    rec.proceeded = false;
    rec.data = std::move(opt_data);
    return rec;
  }
  const CenterCovariates ez = spec.eval_z();
  auto r = detail::recommend_for(spec, fit, ez);
  Vector x = r.package.doses();
  for (std::size_t p = 0; p < P; ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    if (fit.beta_hat.effects[i] <= 0.0) x[i] = spec.bounds.lower()[i];
  }
  rec.recommendations.push_back(r);
  rec.most_package = x;

  TrialDataset rct(P, spec.covariate_count());
  for (int i = 0; i < spec.most.rct_per_arm; ++i) {
    const Vector z = detail::draw_covariates(spec, rng);
    detail::add_center(rct, spec, 1, "c" + std::to_string(i), Arm::control, Vector::Zero(static_cast<Eigen::Index>(P)),
                       z, 1, rng);
  }
  for (int i = 0; i < spec.most.rct_per_arm; ++i) {
    const Vector z = detail::draw_covariates(spec, rng);
    detail::add_center(rct, spec, 1, "t" + std::to_string(i), Arm::intervention, x, z, 1, rng);
  }
  rct.validate();
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(P));
  rec.most_true_mean = spec.link.inverse(linear_predictor(spec.beta, x, ez.values()));
  rec.most_true_effect = rec.most_true_mean - spec.link.inverse(linear_predictor(spec.beta, zero, ez.values()));
  const auto cmp = compare_arms(rct);
  const double crit = dist::normal_quantile(1.0 - spec.alpha / 2.0);
  rec.most_effect_covered = std::abs(cmp.difference() - rec.most_true_effect) <= crit * cmp.standard_error();
  rec.two_sample = two_sample_means_test(rct);
  rec.data = std::move(rct);
  return rec;
}

inline ReplicationRecord simulate_one(const DesignSpec& spec, int index, const Recommendation& truth) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed & 0xffffffffu), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  ReplicationRecord rec;
  switch (spec.kind) {
    case DesignKind::clago:
    case DesignKind::uvlago: rec = simulate_lago(spec, rng, truth); break;
    case DesignKind::factorial: rec = simulate_factorial(spec, rng, truth); break;
    case DesignKind::most: rec = simulate_most(spec, rng); break;
  }
  rec.index = index;
  return rec;
}

struct CoefficientMetrics {
  double truth = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double rel_bias_pct = 0.0;  // NaN when the true value is 0
  double mean_se = 0.0;
  double emp_sd = 0.0;
  double se_over_emp_sd = 0.0;
  double cp95 = 0.0;
};

/// Fit and optimizer summaries for the fit on stages 1..k.
struct StageMetrics {
  int through_stage = 0;
  std::vector<CoefficientMetrics> coefficients;  // intercept, components, covariates
  std::vector<double> optimizer_bias;            // per component
  double rmse = 0.0;
  double mean_opt_q025 = 0.0;
  double mean_opt_q975 = 0.0;
  double feasible_rate = 0.0;
};

struct MostMetrics {
  int proceeded = 0;
  std::vector<int> only_component;  // RCTs including only component p
  int multiple_components = 0;
  // True mean under the RCT package, over proceeding trials.
  double package_mean_median = 0.0;
  double package_mean_q25 = 0.0;
  double package_mean_q75 = 0.0;
  double effect_cp = 0.0;  // over proceeding trials
};

struct StudyMetrics {
  DesignKind kind = DesignKind::clago;
  std::uint64_t seed = 0;
  int replications = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;  // "replication i: message", first few
  Vector true_optimum;
  std::vector<StageMetrics> stages;
  bool sets_computed = false;
  double set_cp95 = 0.0;
  double set_perc = 0.0;
  double bands_cp95 = 0.0;
  double power_wald = 0.0;        // rejection rate, component-wise test
  double power_two_sample = 0.0;  // rejection rate, two-sample means test
  double max_score_norm = 0.0;    // largest max |U(beta_hat)| over all fits
  std::optional<MostMetrics> most;
};

inline int resolve_threads(int requested) {
  int n = requested;
  if (n <= 0) {
    if (const char* env = std::getenv("LAGO_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline StudyMetrics aggregate(const DesignSpec& spec, const std::vector<std::optional<ReplicationRecord>>& recs,
                              const Recommendation& truth) {
  StudyMetrics m;
  m.kind = spec.kind;
  m.seed = spec.seed;
  m.replications = static_cast<int>(recs.size());
  m.true_optimum = truth.package.doses();
  std::vector<const ReplicationRecord*> ok;
  for (const auto& r : recs) {
    if (r) ok.push_back(&*r);
  }
  m.failures = m.replications - static_cast<int>(ok.size());
  if (ok.empty()) return m;

  for (const auto* r : ok) {
    for (const auto& f : r->fits) m.max_score_norm = std::max(m.max_score_norm, f.final_residual_norm);
  }

  const double crit = dist::normal_quantile(1.0 - spec.alpha / 2.0);
  const Vector truth_beta = spec.beta.stacked();
  const CenterCovariates ez = spec.eval_z();
  const std::size_t stage_count = ok.front()->fits.size();
  const bool most = spec.kind == DesignKind::most;

  for (std::size_t k = 0; k < stage_count; ++k) {
    StageMetrics sm;
    sm.through_stage = static_cast<int>(k) + 1;
    for (Eigen::Index c = 0; c < truth_beta.size(); ++c) {
      if (c == 0 && !spec.fit_intercept) continue;
      std::vector<double> est, se;
      int covered = 0;
      for (const auto* r : ok) {
        const auto& f = r->fits[k];
        const double b = f.beta_hat.stacked()[c];
        const double s = std::sqrt(std::max(0.0, f.covariance(c, c)));
        est.push_back(b);
        se.push_back(s);
        covered += std::abs(b - truth_beta[c]) <= crit * s;
      }
      CoefficientMetrics cm;
      cm.truth = truth_beta[c];
      cm.mean_estimate = mean_of(est);
      cm.bias = cm.mean_estimate - cm.truth;
      cm.rel_bias_pct = cm.truth != 0.0 ? 100.0 * cm.bias / cm.truth : std::nan("");
      cm.mean_se = mean_of(se);
      cm.emp_sd = sd_of(est);
      cm.se_over_emp_sd = cm.emp_sd > 0.0 ? cm.mean_se / cm.emp_sd : std::nan("");
      cm.cp95 = static_cast<double>(covered) / static_cast<double>(ok.size());
      sm.coefficients.push_back(cm);
    }
    if (!most) {
      const std::size_t P = spec.components();
      std::vector<double> bias(P, 0.0), mean_opt;
      double sq = 0.0;
      int feasible = 0;
      for (const auto* r : ok) {
        const auto& rc = r->recommendations[k];
        const Vector diff = rc.package.doses() - truth.package.doses();
        for (std::size_t p = 0; p < P; ++p) bias[p] += diff[static_cast<Eigen::Index>(p)];
        sq += diff.squaredNorm();
        mean_opt.push_back(mean_response(spec.link, spec.beta, rc.package, ez));
        feasible += rc.feasible;
      }
      for (auto& b : bias) b /= static_cast<double>(ok.size());
      sm.optimizer_bias = bias;
      sm.rmse = std::sqrt(sq / static_cast<double>(ok.size()));
      sm.mean_opt_q025 = quantile(mean_opt, 0.025);
      sm.mean_opt_q975 = quantile(mean_opt, 0.975);
      sm.feasible_rate = static_cast<double>(feasible) / static_cast<double>(ok.size());
    }
    m.stages.push_back(std::move(sm));
  }

  int wald_rej = 0, ts_rej = 0, set_cov = 0, band_cov = 0;
  double set_frac = 0.0;
  for (const auto* r : ok) {
    if (!most) wald_rej += r->wald.p_value < spec.alpha;
    ts_rej += r->proceeded && r->two_sample.p_value < spec.alpha;
    if (r->sets_computed) {
      set_cov += r->set_covers;
      band_cov += r->bands_cover;
      set_frac += r->set_fraction;
    }
  }
  const double n_ok = static_cast<double>(ok.size());
  m.power_wald = most ? std::nan("") : wald_rej / n_ok;
  m.power_two_sample = ts_rej / n_ok;
  m.sets_computed = !most && spec.compute_sets;
  if (m.sets_computed) {
    m.set_cp95 = set_cov / n_ok;
    m.bands_cp95 = band_cov / n_ok;
    m.set_perc = set_frac / n_ok;
  }
  if (most) {
    MostMetrics mm;
    mm.only_component.assign(spec.components(), 0);
    std::vector<double> effects;
    int covered = 0;
    for (const auto* r : ok) {
      if (!r->proceeded) continue;
      ++mm.proceeded;
      std::vector<std::size_t> used;
      for (std::size_t p = 0; p < spec.components(); ++p) {
        if (r->most_package[static_cast<Eigen::Index>(p)] > spec.bounds.lower()[static_cast<Eigen::Index>(p)]) {
          used.push_back(p);
        }
      }
      if (used.size() == 1) ++mm.only_component[used[0]];
      if (used.size() > 1) ++mm.multiple_components;
      effects.push_back(r->most_true_mean);
      covered += r->most_effect_covered;
    }
    if (!effects.empty()) {
      mm.package_mean_median = quantile(effects, 0.5);
      mm.package_mean_q25 = quantile(effects, 0.25);
      mm.package_mean_q75 = quantile(effects, 0.75);
      mm.effect_cp = static_cast<double>(covered) / static_cast<double>(effects.size());
    }
    m.most = mm;
  }
  return m;
}

}  // namespace detail

/// Runs all replications and aggregates them. Replication i always uses the
/// stream seeded by (seed, i) and results are combined in index order, so the
/// metrics do not depend on the thread count.
inline StudyMetrics run_study(const DesignSpec& spec, int threads = 0) {
  spec.validate();
  const Recommendation truth = true_optimum(spec);
  const int R = spec.replications;
  std::vector<std::optional<ReplicationRecord>> recs(static_cast<std::size_t>(R));
  std::vector<std::string> errors(static_cast<std::size_t>(R));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < R; i = next++) {
      try {
        auto rec = simulate_one(spec, i, truth);
        rec.data = TrialDataset();  // only the summaries are aggregated
        recs[static_cast<std::size_t>(i)] = std::move(rec);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
      }
    }
  };
  const int n = std::min(resolve_threads(threads > 0 ? threads : spec.threads), R);
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  StudyMetrics m = detail::aggregate(spec, recs, truth);
  for (int i = 0; i < R && m.failure_messages.size() < 10; ++i) {
    if (!recs[static_cast<std::size_t>(i)]) {
      m.failure_messages.push_back("replication " + std::to_string(i) + ": " + errors[static_cast<std::size_t>(i)]);
    }
  }
  return m;
}

}  // namespace lago
