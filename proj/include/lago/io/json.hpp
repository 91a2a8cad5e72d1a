#pragma once

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "lago/dataset.hpp"
#include "lago/error.hpp"
#include "lago/estimation.hpp"
#include "lago/inference.hpp"
#include "lago/model.hpp"
#include "lago/optimizer.hpp"
#include "lago/simulation.hpp"

namespace lago::io {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---- readers: every failure names the JSON path of the offending field ----

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path.empty() ? "<root>" : path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw ValidationError(join_path(path, key), "is required");
  return *it;
}

inline const json* optional_field(const json& obj, const std::string& key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

inline double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(path, "must be finite");
  return d;
}

inline long long as_integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ValidationError(path, "expected an integer");
  return v.get<long long>();
}

inline bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ValidationError(path, "expected true or false");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path, "expected a string");
  return v.get<std::string>();
}

inline Vector as_vector(const json& v, const std::string& path, long expected = -1) {
  if (!v.is_array()) throw ValidationError(path, "expected an array of numbers");
  if (expected >= 0 && static_cast<long>(v.size()) != expected) {
    throw ValidationError(path, "expected " + std::to_string(expected) + " values, got " + std::to_string(v.size()));
  }
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = as_number(v[i], path + "[" + std::to_string(i) + "]");
  }
  return out;
}

inline double number_or(const json& obj, const std::string& key, double fallback, const std::string& path) {
  const json* v = optional_field(obj, key);
  return v ? as_number(*v, join_path(path, key)) : fallback;
}

inline long long integer_or(const json& obj, const std::string& key, long long fallback, const std::string& path) {
  const json* v = optional_field(obj, key);
  return v ? as_integer(*v, join_path(path, key)) : fallback;
}

inline bool bool_or(const json& obj, const std::string& key, bool fallback, const std::string& path) {
  const json* v = optional_field(obj, key);
  return v ? as_bool(*v, join_path(path, key)) : fallback;
}

// Model types name their own fields ("cost.unit_costs[1]", "bounds[0]");
// this rebases such a path under the JSON location being read.
inline std::string rebase_path(const std::string& path, const std::string& inner) {
  if (inner.empty()) return path;
  const std::string head = inner.substr(0, inner.find_first_of(".["));
  const auto dot = path.rfind('.');
  const std::string tail = dot == std::string::npos ? path : path.substr(dot + 1);
  if (head == tail) return path + inner.substr(head.size());
  return join_path(path, inner);
}

template <typename F>
auto at_path(const std::string& path, F&& make) {
  try {
    return make();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    const std::string message = e.path().empty() ? what : what.substr(e.path().size() + 2);
    throw ValidationError(rebase_path(path, e.path()), message);
  } catch (const DimensionError& e) {
    throw ValidationError(path, e.what());
  }
}

inline LinkFunction link_from_json(const json& v, const std::string& path) {
  const std::string name = as_string(v, path);
  return at_path(path, [&] { return LinkFunction(parse_link(name)); });
}

inline ComponentBounds bounds_from_json(const json& v, const std::string& path) {
  const Vector lo = as_vector(require(v, "lower", path), join_path(path, "lower"));
  const Vector hi = as_vector(require(v, "upper", path), join_path(path, "upper"), lo.size());
  return at_path(path, [&] { return ComponentBounds(lo, hi); });
}

inline CostFunction cost_from_json(const json& v, const std::string& path) {
  const std::string kind = as_string(require(v, "kind", path), join_path(path, "kind"));
  if (kind == "linear") {
    const Vector c = as_vector(require(v, "unit_costs", path), join_path(path, "unit_costs"));
    const double fixed = number_or(v, "fixed", 0.0, path);
    return at_path(path, [&] { return CostFunction::linear(c, fixed); });
  }
  if (kind == "cubic") {
    const std::string cpath = join_path(path, "coefficients");
    const json& rows = require(v, "coefficients", path);
    if (!rows.is_array() || rows.empty()) throw ValidationError(cpath, "expected one [a, b, c, d] row per component");
    Matrix m(static_cast<Eigen::Index>(rows.size()), 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      m.row(static_cast<Eigen::Index>(i)) = as_vector(rows[i], cpath + "[" + std::to_string(i) + "]", 4).transpose();
    }
    const double constant = number_or(v, "constant", 0.0, path);
    return at_path(path, [&] { return CostFunction::cubic(m, constant); });
  }
  throw ValidationError(join_path(path, "kind"), "expected 'linear' or 'cubic', got '" + kind + "'");
}

/// Compact cost syntax used on the command line and in API queries:
/// "linear:8,2" or "cubic:a,b,c,d;a,b,c,d".
inline CostFunction parse_cost_spec(const std::string& spec, const std::string& path = "cost") {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw ValidationError(path, "expected 'linear:c1,c2,...' or 'cubic:a,b,c,d;...'");
  const std::string kind = spec.substr(0, colon);
  auto numbers = [&](const std::string& s) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto comma = s.find(',', start);
      const std::string tok = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      try {
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError(path, "'" + tok + "' is not a number");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  };
  const std::string body = spec.substr(colon + 1);
  if (kind == "linear") {
    const auto c = numbers(body);
    return at_path(path, [&] { return CostFunction::linear(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()))); });
  }
  if (kind == "cubic") {
    std::vector<std::vector<double>> rows;
    std::size_t start = 0;
    while (start <= body.size()) {
      const auto semi = body.find(';', start);
      rows.push_back(numbers(body.substr(start, semi == std::string::npos ? std::string::npos : semi - start)));
      if (semi == std::string::npos) break;
      start = semi + 1;
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != 4) throw ValidationError(path, "each cubic component needs 4 coefficients a,b,c,d");
      for (int k = 0; k < 4; ++k) m(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
    }
    return at_path(path, [&] { return CostFunction::cubic(m); });
  }
  throw ValidationError(path, "unknown cost kind '" + kind + "'");
}

/// "0:2,0:8" -> bounds [0,2] x [0,8].
inline ComponentBounds parse_bounds_spec(const std::string& spec, const std::string& path = "bounds") {
  std::vector<double> lo, hi;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string tok = spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw ValidationError(path, "expected lower:upper pairs, got '" + tok + "'");
    try {
      lo.push_back(std::stod(tok.substr(0, colon)));
      hi.push_back(std::stod(tok.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ValidationError(path, "'" + tok + "' is not a lower:upper pair of numbers");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return at_path(path, [&] {
    return ComponentBounds(Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size())),
                           Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size())));
  });
}

/// Comma-separated numbers; the empty string is the empty vector.
inline Vector parse_number_list(const std::string& s, const std::string& path) {
  std::vector<double> out;
  if (!s.empty()) {
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto comma = s.find(',', start);
      const std::string tok = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      try {
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError(path, "'" + tok + "' is not a number");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return Eigen::Map<const Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline ParameterVector beta_from_json(const json& v, const std::string& path) {
  const double b0 = number_or(v, "intercept", 0.0, path);
  const Vector b1 = as_vector(require(v, "effects", path), join_path(path, "effects"));
  const json* b2 = optional_field(v, "covariate_effects");
  return ParameterVector(b0, b1, b2 ? as_vector(*b2, join_path(path, "covariate_effects")) : Vector(0));
}

// ---- writers ----

inline json to_json(const Vector& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline json to_json(const ParameterVector& b) {
  return {{"intercept", b.intercept}, {"effects", to_json(b.effects)}, {"covariate_effects", to_json(b.covariate_effects)}};
}

inline json to_json(const ComponentBounds& b) { return {{"lower", to_json(b.lower())}, {"upper", to_json(b.upper())}}; }

inline json to_json(const CostFunction& c) {
  if (c.kind() == CostKind::linear) {
    return {{"kind", "linear"}, {"unit_costs", to_json(c.unit_costs())}, {"fixed", c.constant()}};
  }
  return {{"kind", "cubic"}, {"coefficients", to_json(c.cubic_coefficients())}, {"constant", c.constant()}};
}

inline json to_json(const TestResult& t) {
  return {{"kind", std::string(to_string(t.kind))}, {"statistic", t.statistic}, {"df", t.df}, {"p_value", t.p_value}};
}

inline json to_json(const FitResult& f) {
  return {{"link", std::string(to_string(f.link.kind()))},
          {"beta", to_json(f.beta_hat)},
          {"covariance", to_json(f.covariance)},
          {"standard_errors", to_json(f.standard_errors())},
          {"n_total", f.n_total},
          {"converged", f.converged},
          {"iterations", f.iterations},
          {"final_residual_norm", f.final_residual_norm},
          {"has_intercept", f.has_intercept},
          {"residual_variance", f.residual_variance}};
}

inline FitResult fit_from_json(const json& v, const std::string& path = "") {
  FitResult f;
  f.link = link_from_json(require(v, "link", path), join_path(path, "link"));
  f.beta_hat = beta_from_json(require(v, "beta", path), join_path(path, "beta"));
  const std::string cpath = join_path(path, "covariance");
  const json& cov = require(v, "covariance", path);
  const auto d = static_cast<long>(f.beta_hat.dimension());
  if (!cov.is_array() || static_cast<long>(cov.size()) != d) {
    throw ValidationError(cpath, "expected a " + std::to_string(d) + " x " + std::to_string(d) + " matrix");
  }
  f.covariance.resize(d, d);
  for (long i = 0; i < d; ++i) {
    f.covariance.row(i) = as_vector(cov[static_cast<std::size_t>(i)], cpath + "[" + std::to_string(i) + "]", d).transpose();
  }
  f.n_total = static_cast<std::size_t>(integer_or(v, "n_total", 0, path));
  f.converged = bool_or(v, "converged", true, path);
  f.iterations = static_cast<int>(integer_or(v, "iterations", 0, path));
  f.final_residual_norm = number_or(v, "final_residual_norm", 0.0, path);
  f.has_intercept = bool_or(v, "has_intercept", true, path);
  f.residual_variance = number_or(v, "residual_variance", 0.0, path);
  return f;
}

inline json to_json(const Recommendation& r) {
  return {{"package", to_json(r.package.doses())},
          {"z", to_json(r.covariates.values())},
          {"projected_mean", r.projected_mean},
          {"cost", r.cost},
          {"feasible", r.feasible},
          {"method", std::string(to_string(r.method))}};
}

inline json to_json(const MeanInterval& m) {
  return {{"x", to_json(m.x.doses())}, {"mean_hat", m.mean_hat}, {"lower", m.lower}, {"upper", m.upper}, {"se_eta", m.se_eta}};
}

inline json to_json(const ConfidenceSet& cs) {
  json members = json::array();
  for (const auto& m : cs.members) members.push_back(to_json(m.doses()));
  return {{"grid_increment", cs.grid_increment},
          {"total_grid_points", cs.total_grid_points},
          {"set_percentage", cs.set_percentage()},
          {"members", members}};
}

inline json to_json(const ConfidenceBands& cb) {
  json entries = json::array();
  for (const auto& e : cb.entries) {
    entries.push_back({{"x", to_json(e.x.doses())}, {"mean_hat", e.mean_hat}, {"band_lower", e.band_lower}, {"band_upper", e.band_upper}});
  }
  return {{"grid_increment", cb.grid_increment}, {"multiplier", cb.multiplier}, {"entries", entries}};
}

inline json to_json(const TrialRow& r) {
  return {{"stage", r.stage}, {"center_id", r.center_id}, {"arm", std::string(to_string(r.arm))}, {"y", r.y},
          {"a", to_json(r.a)}, {"z", to_json(r.z)}};
}

/// A row object {center_id, arm, y, a, z}; `stage` comes from the caller.
inline TrialRow row_from_json(const json& v, int stage, std::size_t P, std::size_t Q, const std::string& path) {
  TrialRow r;
  r.stage = stage;
  r.center_id = as_string(require(v, "center_id", path), join_path(path, "center_id"));
  if (r.center_id.empty()) throw ValidationError(join_path(path, "center_id"), "must be non-empty");
  const std::string arm = as_string(require(v, "arm", path), join_path(path, "arm"));
  r.arm = at_path(join_path(path, "arm"), [&] { return parse_arm(arm); });
  r.y = as_number(require(v, "y", path), join_path(path, "y"));
  r.a = as_vector(require(v, "a", path), join_path(path, "a"), static_cast<long>(P));
  const json* z = optional_field(v, "z");
  r.z = z ? as_vector(*z, join_path(path, "z"), static_cast<long>(Q)) : Vector(0);
  if (static_cast<std::size_t>(r.z.size()) != Q) {
    throw ValidationError(join_path(path, "z"), "expected " + std::to_string(Q) + " values");
  }
  return r;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const StudyMetrics& m) {
  json stages = json::array();
  for (const auto& s : m.stages) {
    json coefs = json::array();
    for (std::size_t i = 0; i < s.coefficients.size(); ++i) {
      const auto& c = s.coefficients[i];
      coefs.push_back({{"truth", c.truth},
                       {"mean_estimate", c.mean_estimate},
                       {"bias", c.bias},
                       {"rel_bias_pct", number_or_null(c.rel_bias_pct)},
                       {"mean_se", c.mean_se},
                       {"emp_sd", c.emp_sd},
                       {"se_over_emp_sd", number_or_null(c.se_over_emp_sd)},
                       {"cp95", c.cp95}});
    }
    json st = {{"through_stage", s.through_stage}, {"coefficients", coefs}};
    if (!s.optimizer_bias.empty()) {
      json b = json::array();
      for (double x : s.optimizer_bias) b.push_back(x);
      st["optimizer_bias"] = b;
      st["rmse"] = s.rmse;
      st["mean_opt_q025"] = s.mean_opt_q025;
      st["mean_opt_q975"] = s.mean_opt_q975;
      st["feasible_rate"] = s.feasible_rate;
    }
    stages.push_back(st);
  }
  json out = {{"schema_version", kSchemaVersion},
              {"kind", std::string(to_string(m.kind))},
              {"seed", m.seed},
              {"replications", m.replications},
              {"failures", m.failures},
              {"failure_messages", m.failure_messages},
              {"true_optimum", to_json(m.true_optimum)},
              {"stages", stages},
              {"power", {{"wald_chisq", number_or_null(m.power_wald)}, {"two_sample_z", m.power_two_sample}}},
              {"max_score_norm", m.max_score_norm}};
  if (m.sets_computed) {
    out["set_cp95"] = m.set_cp95;
    out["set_perc"] = m.set_perc;
    out["bands_cp95"] = m.bands_cp95;
  }
  if (m.most) {
    out["most"] = {{"proceeded", m.most->proceeded},
                   {"only_component", m.most->only_component},
                   {"multiple_components", m.most->multiple_components},
                   {"package_mean_median", m.most->package_mean_median},
                   {"package_mean_q25", m.most->package_mean_q25},
                   {"package_mean_q75", m.most->package_mean_q75},
                   {"effect_cp", m.most->effect_cp}};
  }
  return out;
}

}  // namespace lago::io
