#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "lago/io/json.hpp"
#include "lago/simulation.hpp"

// Study configuration files are JSON objects whose keys mirror DesignSpec.
// Unknown keys are rejected so a misspelt option never silently falls back
// to its default.

namespace lago::io {

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw ValidationError(join_path(path, key), "unknown key");
  }
}

inline StageSpec stage_from_json(const json& v, const std::string& path) {
  reject_unknown(v, {"intervention_centers", "control_centers", "patients_per_center", "factorial"}, path);
  StageSpec s;
  s.intervention_centers = static_cast<int>(integer_or(v, "intervention_centers", 0, path));
  s.control_centers = static_cast<int>(integer_or(v, "control_centers", 0, path));
  s.patients_per_center = static_cast<int>(integer_or(v, "patients_per_center", 1, path));
  s.factorial = bool_or(v, "factorial", false, path);
  return s;
}

inline CovariateSpec covariates_from_json(const json& v, const std::string& path) {
  reject_unknown(v, {"kind", "mean", "sd", "values"}, path);
  CovariateSpec c;
  const json* kind = optional_field(v, "kind");
  const std::string k = kind ? as_string(*kind, join_path(path, "kind")) : "normal";
  if (k == "normal") {
    c.kind = CovariateSpec::Kind::normal;
  } else if (k == "empirical") {
    c.kind = CovariateSpec::Kind::empirical;
  } else {
    throw ValidationError(join_path(path, "kind"), "expected 'normal' or 'empirical'");
  }
  c.mean = number_or(v, "mean", 0.0, path);
  c.sd = number_or(v, "sd", 1.0, path);
  if (!(c.sd >= 0.0)) throw ValidationError(join_path(path, "sd"), "must be >= 0");
  if (const json* vals = optional_field(v, "values")) {
    const Vector x = as_vector(*vals, join_path(path, "values"));
    c.values.assign(x.begin(), x.end());
  }
  return c;
}

inline AdherenceSpec adherence_from_json(const json& v, const std::string& path) {
  reject_unknown(v, {"low", "high", "initial_stage", "later_stages"}, path);
  AdherenceSpec a;
  a.low = number_or(v, "low", 1.0, path);
  a.high = number_or(v, "high", 1.0, path);
  a.initial_stage = bool_or(v, "initial_stage", false, path);
  a.later_stages = bool_or(v, "later_stages", false, path);
  return a;
}

inline PowerSteering power_from_json(const json& v, const std::string& path) {
  reject_unknown(v, {"enabled", "target", "alpha", "planned_n_per_arm"}, path);
  PowerSteering p;
  p.enabled = bool_or(v, "enabled", true, path);
  p.target.power = number_or(v, "target", 0.9, path);
  p.target.alpha = number_or(v, "alpha", 0.05, path);
  const long long n = integer_or(v, "planned_n_per_arm", 50, path);
  if (!(p.target.power > 0.0 && p.target.power < 1.0)) throw ValidationError(join_path(path, "target"), "must be in (0, 1)");
  if (!(p.target.alpha > 0.0 && p.target.alpha < 1.0)) throw ValidationError(join_path(path, "alpha"), "must be in (0, 1)");
  if (n < 2) throw ValidationError(join_path(path, "planned_n_per_arm"), "must be >= 2");
  p.target.planned_n_per_arm = static_cast<std::size_t>(n);
  return p;
}

}  // namespace detail

/// Builds and validates a DesignSpec. Every error carries the JSON path.
inline DesignSpec design_from_json(const json& v) {
  detail::reject_unknown(v,
                         {"kind", "link", "beta", "fit_intercept", "bounds", "cost", "theta", "sigma", "stages",
                          "initial_package", "factorial_packages", "covariates", "adherence", "tailor_to_center",
                          "evaluation_z", "power", "most", "optimizer_increment", "set_increment", "compute_sets",
                          "alpha", "seed", "replications", "threads", "output_dir", "description", "command"},
                         "");
  DesignSpec s;
  s.kind = at_path("kind", [&] { return parse_design_kind(as_string(require(v, "kind", ""), "kind")); });
  s.link = link_from_json(require(v, "link", ""), "link");
  const json& beta = require(v, "beta", "");
  detail::reject_unknown(beta, {"intercept", "effects", "covariate_effects"}, "beta");
  s.beta = beta_from_json(beta, "beta");
  s.fit_intercept = bool_or(v, "fit_intercept", true, "");
  s.bounds = bounds_from_json(require(v, "bounds", ""), "bounds");
  s.cost = cost_from_json(require(v, "cost", ""), "cost");
  s.theta = as_number(require(v, "theta", ""), "theta");
  s.sigma = number_or(v, "sigma", 1.0, "");
  if (const json* st = optional_field(v, "stages")) {
    if (!st->is_array()) throw ValidationError("stages", "expected an array of stage objects");
    for (std::size_t k = 0; k < st->size(); ++k) {
      s.stages.push_back(detail::stage_from_json((*st)[k], "stages[" + std::to_string(k) + "]"));
    }
  }
  if (const json* x = optional_field(v, "initial_package")) s.initial_package = as_vector(*x, "initial_package");
  if (const json* f = optional_field(v, "factorial_packages")) {
    if (!f->is_array()) throw ValidationError("factorial_packages", "expected an array of packages");
    for (std::size_t i = 0; i < f->size(); ++i) {
      s.factorial_packages.push_back(as_vector((*f)[i], "factorial_packages[" + std::to_string(i) + "]"));
    }
  }
  if (const json* c = optional_field(v, "covariates")) s.covariates = detail::covariates_from_json(*c, "covariates");
  if (const json* a = optional_field(v, "adherence")) s.adherence = detail::adherence_from_json(*a, "adherence");
  s.tailor_to_center = bool_or(v, "tailor_to_center", true, "");
  if (const json* z = optional_field(v, "evaluation_z")) s.evaluation_z = as_vector(*z, "evaluation_z");
  if (const json* p = optional_field(v, "power")) s.power = detail::power_from_json(*p, "power");
  if (const json* m = optional_field(v, "most")) {
    detail::reject_unknown(*m, {"optimization_n", "rct_per_arm"}, "most");
    s.most.optimization_n = static_cast<int>(integer_or(*m, "optimization_n", 100, "most"));
    s.most.rct_per_arm = static_cast<int>(integer_or(*m, "rct_per_arm", 100, "most"));
  }
  s.optimizer_increment = number_or(v, "optimizer_increment", 0.01, "");
  s.set_increment = number_or(v, "set_increment", 0.1, "");
  if (!(s.optimizer_increment > 0.0)) throw ValidationError("optimizer_increment", "must be > 0");
  if (!(s.set_increment > 0.0)) throw ValidationError("set_increment", "must be > 0");
  s.compute_sets = bool_or(v, "compute_sets", true, "");
  s.alpha = number_or(v, "alpha", 0.05, "");
  if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw ValidationError("alpha", "must be in (0, 1)");
  const long long seed = integer_or(v, "seed", 1, "");
  if (seed < 0) throw ValidationError("seed", "must be >= 0");
  s.seed = static_cast<std::uint64_t>(seed);
  s.replications = static_cast<int>(integer_or(v, "replications", 100, ""));
  s.threads = static_cast<int>(integer_or(v, "threads", 0, ""));
  at_path("", [&] {
    s.validate();
    return 0;
  });
  return s;
}

/// Parses JSON text; syntax errors become ParseError with line and column.
inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string msg = e.what();
    const auto cut = msg.find("error: ");
    throw ParseError(line, column, "invalid JSON: " + (cut == std::string::npos ? msg : msg.substr(cut + 7)));
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline DesignSpec load_design(const std::string& path) { return design_from_json(parse_json_text(read_text_file(path))); }

}  // namespace lago::io
