#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include "lago/io/config.hpp"
#include "lago/io/csv.hpp"
#include "lago/io/json.hpp"

// Declarative runs: a config names a command (simulate, fit, recommend,
// confset) and an output directory; running it writes JSON + CSV there.

namespace lago::io {

enum class Command { simulate, fit, recommend, confset };

inline std::string_view to_string(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::fit: return "fit";
    case Command::recommend: return "recommend";
    case Command::confset: return "confset";
  }
  return "unknown";
}

/// Inputs shared by the fit / recommend / confset commands.
struct AnalysisSpec {
  std::string csv;  // trial data to fit
  LinkFunction link;
  bool fit_intercept = true;
  std::optional<FitResult> fit;         // a previously saved fit
  std::optional<ParameterVector> beta;  // coefficients only; no intervals
  std::optional<ComponentBounds> bounds;
  std::optional<CostFunction> cost;
  std::optional<double> theta;
  Vector z;
  double grid_increment = 0.01;  // optimizer grid for non-linear costs
  double set_increment = 0.1;    // confidence set grid
  double band_increment = 0.1;   // band grid (kept coarse: one entry per point)
  double level = 0.95;
};

struct RunConfig {
  Command command = Command::simulate;
  std::string output_dir = ".";
  std::optional<DesignSpec> design;
  AnalysisSpec analysis;
};

namespace detail {

inline std::string resolve_relative(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

inline AnalysisSpec analysis_from_json(const json& v, Command cmd, const std::string& base_dir) {
  reject_unknown(v,
                 {"command", "output_dir", "description", "csv", "link", "fit_intercept", "fit", "beta", "bounds",
                  "cost", "theta", "z", "grid_increment", "set_increment", "band_increment",
                  "level"},
                 "");
  AnalysisSpec a;
  if (const json* link = optional_field(v, "link")) a.link = link_from_json(*link, "link");
  a.fit_intercept = bool_or(v, "fit_intercept", true, "");
  if (const json* csv = optional_field(v, "csv")) a.csv = resolve_relative(as_string(*csv, "csv"), base_dir);
  if (const json* fit = optional_field(v, "fit")) {
    if (fit->is_string()) {
      const std::string path = resolve_relative(fit->get<std::string>(), base_dir);
      a.fit = fit_from_json(parse_json_text(read_text_file(path)));
    } else {
      a.fit = fit_from_json(*fit, "fit");
    }
  }
  if (const json* beta = optional_field(v, "beta")) a.beta = beta_from_json(*beta, "beta");
  if (const json* b = optional_field(v, "bounds")) a.bounds = bounds_from_json(*b, "bounds");
  if (const json* c = optional_field(v, "cost")) a.cost = cost_from_json(*c, "cost");
  if (const json* t = optional_field(v, "theta")) a.theta = as_number(*t, "theta");
  if (const json* z = optional_field(v, "z")) a.z = as_vector(*z, "z");
  a.grid_increment = number_or(v, "grid_increment", 0.01, "");
  a.set_increment = number_or(v, "set_increment", 0.1, "");
  a.band_increment = number_or(v, "band_increment", 0.1, "");
  a.level = number_or(v, "level", 0.95, "");
  if (!(a.grid_increment > 0.0)) throw ValidationError("grid_increment", "must be > 0");
  if (!(a.set_increment > 0.0)) throw ValidationError("set_increment", "must be > 0");
  if (!(a.band_increment > 0.0)) throw ValidationError("band_increment", "must be > 0");
  if (!(a.level > 0.0 && a.level < 1.0)) throw ValidationError("level", "must be in (0, 1)");

  const bool has_source = !a.csv.empty() || a.fit || a.beta;
  if (!has_source) throw ValidationError("csv", "one of csv, fit or beta is required");
  if (cmd == Command::fit && a.csv.empty()) throw ValidationError("csv", "is required for fit");
  if (!a.csv.empty() && !optional_field(v, "link")) throw ValidationError("link", "is required with csv");
  if (cmd == Command::recommend || cmd == Command::confset) {
    if (!a.bounds) throw ValidationError("bounds", "is required");
    if (!a.theta) throw ValidationError("theta", "is required");
    if (cmd == Command::recommend && !a.cost) throw ValidationError("cost", "is required");
    if (a.cost && a.cost->components() != a.bounds->size()) {
      throw ValidationError("cost", "expected " + std::to_string(a.bounds->size()) + " components");
    }
  }
  if (cmd == Command::confset && a.beta && !a.fit && a.csv.empty()) {
    throw ValidationError("fit", "confset needs a covariance: give csv or fit");
  }
  return a;
}

}  // namespace detail

/// `base_dir` anchors the config's input paths (csv, fit); output_dir is
/// taken relative to the working directory.
inline RunConfig run_config_from_json(const json& v, const std::string& base_dir = "") {
  RunConfig rc;
  const json* cmd = optional_field(v, "command");
  const std::string name = cmd ? as_string(*cmd, "command") : "simulate";
  if (name == "simulate") {
    rc.command = Command::simulate;
  } else if (name == "fit") {
    rc.command = Command::fit;
  } else if (name == "recommend") {
    rc.command = Command::recommend;
  } else if (name == "confset") {
    rc.command = Command::confset;
  } else {
    throw ValidationError("command", "expected simulate, fit, recommend or confset, got '" + name + "'");
  }
  if (const json* out = optional_field(v, "output_dir")) {
    rc.output_dir = as_string(*out, "output_dir");
  }
  if (rc.command == Command::simulate) {
    rc.design = design_from_json(v);
  } else {
    rc.analysis = detail::analysis_from_json(v, rc.command, base_dir);
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return run_config_from_json(parse_json_text(read_text_file(path)), dir);
}

inline std::vector<std::string> coefficient_names(std::size_t P, std::size_t Q) {
  std::vector<std::string> names{"intercept"};
  for (std::size_t p = 0; p < P; ++p) names.push_back("a_" + std::to_string(p + 1));
  for (std::size_t q = 0; q < Q; ++q) names.push_back("z_" + std::to_string(q + 1));
  return names;
}

/// Fit JSON plus the component-wise Wald test and, when both arms have at
/// least two rows, the two-sample test.
inline json fit_report(const FitResult& fit, const TrialDataset& data) {
  json out = to_json(fit);
  out["schema_version"] = kSchemaVersion;
  out["coefficient_names"] = coefficient_names(fit.components(), fit.covariates());
  json tests = json::object();
  try {
    tests["wald"] = to_json(wald_component_test(fit));
  } catch (const Error& e) {
    tests["wald"] = {{"error", e.what()}};
  }
  if (data.arm_size(Arm::control) >= 2 && data.arm_size(Arm::intervention) >= 2) {
    tests["two_sample"] = to_json(two_sample_means_test(data));
  }
  out["tests"] = tests;
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + p.string() + "'");
}

inline std::string metrics_csv(const StudyMetrics& m) {
  std::ostringstream ss;
  ss << "through_stage,coefficient,truth,mean_estimate,bias,rel_bias_pct,mean_se,emp_sd,se_over_emp_sd,cp95\n";
  for (const auto& s : m.stages) {
    const auto P = static_cast<std::size_t>(m.true_optimum.size());
    const auto names = coefficient_names(P, s.coefficients.size() - 1 - P);
    for (std::size_t i = 0; i < s.coefficients.size(); ++i) {
      const auto& c = s.coefficients[i];
      ss << s.through_stage << ',' << (i < names.size() ? names[i] : "b" + std::to_string(i)) << ','
         << format_double(c.truth) << ',' << format_double(c.mean_estimate) << ',' << format_double(c.bias) << ','
         << format_double(c.rel_bias_pct) << ',' << format_double(c.mean_se) << ',' << format_double(c.emp_sd) << ','
         << format_double(c.se_over_emp_sd) << ',' << format_double(c.cp95) << '\n';
    }
  }
  return ss.str();
}

struct LoadedFit {
  std::optional<FitResult> fit;
  std::optional<TrialDataset> data;
  ParameterVector beta;
  LinkFunction link;
};

inline LoadedFit load_fit(const AnalysisSpec& a) {
  LoadedFit lf;
  if (!a.csv.empty()) {
    lf.data = load_trial_csv(a.csv);
    FitOptions o;
    o.intercept = a.fit_intercept;
    lf.fit = fit_gee(*lf.data, a.link, o);
  } else if (a.fit) {
    lf.fit = a.fit;
  }
  lf.link = lf.fit ? lf.fit->link : a.link;
  lf.beta = a.beta ? *a.beta : lf.fit->beta_hat;
  return lf;
}

inline CenterCovariates covariates_for(const AnalysisSpec& a, std::size_t Q) {
  if (a.z.size() == 0) return CenterCovariates::zeros(Q);
  if (static_cast<std::size_t>(a.z.size()) != Q) {
    throw ValidationError("z", "expected " + std::to_string(Q) + " values, got " + std::to_string(a.z.size()));
  }
  return CenterCovariates(a.z);
}

}  // namespace detail

/// Executes a run, writes its artifacts into output_dir and returns the
/// primary JSON document (also written as <command>.json).
inline json execute(const RunConfig& rc, int threads = 0, StudyMetrics* metrics_out = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(rc.output_dir);
  const fs::path out(rc.output_dir);
  json result;
  switch (rc.command) {
    case Command::simulate: {
      const StudyMetrics m = run_study(*rc.design, threads > 0 ? threads : rc.design->threads);
      result = to_json(m);
      if (metrics_out) *metrics_out = m;
      detail::write_file(out / "metrics.csv", detail::metrics_csv(m));
      detail::write_file(out / "metrics.json", result.dump(2) + "\n");
      return result;
    }
    case Command::fit: {
      const auto lf = detail::load_fit(rc.analysis);
      result = fit_report(*lf.fit, *lf.data);
      std::ostringstream ss;
      ss << "coefficient,estimate,std_error\n";
      const auto names = coefficient_names(lf.fit->components(), lf.fit->covariates());
      const Vector b = lf.fit->beta_hat.stacked();
      const Vector se = lf.fit->standard_errors();
      for (Eigen::Index i = 0; i < b.size(); ++i) {
        ss << names[static_cast<std::size_t>(i)] << ',' << format_double(b[i]) << ',' << format_double(se[i]) << '\n';
      }
      detail::write_file(out / "coefficients.csv", ss.str());
      detail::write_file(out / "fit.json", result.dump(2) + "\n");
      return result;
    }
    case Command::recommend: {
      const auto& a = rc.analysis;
      const auto lf = detail::load_fit(a);
      const CenterCovariates z = detail::covariates_for(a, lf.beta.covariates());
      GridOptions grid;
      grid.increment = a.grid_increment;
      const Recommendation r = recommend(lf.beta, z, *a.bounds, *a.cost, TargetSpec{*a.theta}, lf.link, grid);
      result = {{"schema_version", kSchemaVersion}, {"recommendation", to_json(r)}};
      if (lf.fit) {
        FitResult f = *lf.fit;
        f.beta_hat = lf.beta;
        result["mean_ci"] = to_json(mean_ci(f, r.package, z, a.level));
      }
      std::ostringstream ss;
      ss << "component,dose\n";
      for (std::size_t p = 0; p < r.package.size(); ++p) ss << "a_" << p + 1 << ',' << format_double(r.package[p]) << '\n';
      detail::write_file(out / "recommendation.csv", ss.str());
      detail::write_file(out / "recommend.json", result.dump(2) + "\n");
      return result;
    }
    case Command::confset: {
      const auto& a = rc.analysis;
      const auto lf = detail::load_fit(a);
      FitResult f = *lf.fit;
      if (a.beta) f.beta_hat = *a.beta;
      const CenterCovariates z = detail::covariates_for(a, f.covariates());
      const ConfidenceSet cs = confidence_set(f, *a.bounds, z, TargetSpec{*a.theta}, a.set_increment, a.level);
      const ConfidenceBands cb = confidence_bands(f, *a.bounds, z, a.band_increment, a.level);
      result = {{"schema_version", kSchemaVersion}, {"confidence_set", to_json(cs)}, {"bands", to_json(cb)}};
      if (a.cost && !cs.members.empty()) {
        const auto q = cost_quartiles(cs, *a.cost);
        result["cost_quartiles"] = {{"q1", q.q1}, {"median", q.q2}, {"q3", q.q3}};
      }
      std::ostringstream ss;
      for (std::size_t p = 0; p < f.components(); ++p) ss << "a_" << p + 1 << ',';
      ss << "mean_hat,band_lower,band_upper,ci_lower,ci_upper,in_set\n";
      for (const auto& e : cb.entries) {
        const MeanInterval ci = mean_ci(f, e.x, z, a.level);
        for (double x : e.x.doses()) ss << format_double(x) << ',';
        ss << format_double(e.mean_hat) << ',' << format_double(e.band_lower) << ',' << format_double(e.band_upper)
           << ',' << format_double(ci.lower) << ',' << format_double(ci.upper) << ','
           << (ci.contains(*a.theta) ? 1 : 0) << '\n';
      }
      detail::write_file(out / "confset.csv", ss.str());
      detail::write_file(out / "confset.json", result.dump(2) + "\n");
      return result;
    }
  }
  return result;
}

}  // namespace lago::io
