// lago: command-line front end. Machine output (JSON) goes to stdout,
// human-readable tables to stderr.

#include <cstdio>
#include <iostream>
#include <string>

#include "lago/io/run.hpp"
#include "lago/service/http.hpp"

#include <CLI11.hpp>

namespace {

using lago::io::json;

void print_metrics_table(const lago::StudyMetrics& m) {
  std::fprintf(stderr, "%s  R=%d  failures=%d  seed=%llu\n", std::string(lago::to_string(m.kind)).c_str(),
               m.replications, m.failures, static_cast<unsigned long long>(m.seed));
  for (const auto& s : m.stages) {
    std::fprintf(stderr, "through stage %d\n  %-10s %9s %9s %9s %8s %8s %8s %6s\n", s.through_stage, "coef", "truth",
                 "mean", "bias", "relbias%", "se/sd", "emp_sd", "cp95");
    const auto P = static_cast<std::size_t>(m.true_optimum.size());
    const auto names = lago::io::coefficient_names(P, s.coefficients.size() - 1 - P);
    for (std::size_t i = 0; i < s.coefficients.size(); ++i) {
      const auto& c = s.coefficients[i];
      std::fprintf(stderr, "  %-10s %9.4f %9.4f %9.4f %8.2f %8.3f %8.4f %6.3f\n", names[i].c_str(), c.truth,
                   c.mean_estimate, c.bias, c.rel_bias_pct, c.se_over_emp_sd, c.emp_sd, c.cp95);
    }
    if (!s.optimizer_bias.empty()) {
      std::fprintf(stderr, "  optimizer bias:");
      for (double b : s.optimizer_bias) std::fprintf(stderr, " %.4f", b);
      std::fprintf(stderr, "  rMSE %.4f  MeanOpt [%.4f, %.4f]\n", s.rmse, s.mean_opt_q025, s.mean_opt_q975);
    }
  }
  if (m.sets_computed) {
    std::fprintf(stderr, "SetCP95 %.3f  SetPerc %.3f  BandsCP95 %.3f\n", m.set_cp95, m.set_perc, m.bands_cp95);
  }
  std::fprintf(stderr, "power: wald %.3f  two-sample %.3f\n", m.power_wald, m.power_two_sample);
}

void print_fit_table(const lago::FitResult& f) {
  const auto names = lago::io::coefficient_names(f.components(), f.covariates());
  const lago::Vector b = f.beta_hat.stacked();
  const lago::Vector se = f.standard_errors();
  std::fprintf(stderr, "%-10s %12s %12s\n", "coef", "estimate", "std_error");
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    std::fprintf(stderr, "%-10s %12.6f %12.6f\n", names[static_cast<std::size_t>(i)].c_str(), b[i], se[i]);
  }
  std::fprintf(stderr, "n=%zu  converged=%s  iterations=%d\n", f.n_total, f.converged ? "yes" : "no", f.iterations);
}

lago::FitResult load_fit_file(const std::string& path) {
  return lago::io::fit_from_json(lago::io::parse_json_text(lago::io::read_text_file(path)));
}

lago::CenterCovariates covariates_arg(const std::string& z, std::size_t q) {
  if (z.empty()) return lago::CenterCovariates::zeros(q);
  const lago::Vector v = lago::io::parse_number_list(z, "z");
  if (static_cast<std::size_t>(v.size()) != q) {
    throw lago::ValidationError("z", "expected " + std::to_string(q) + " values");
  }
  return lago::CenterCovariates(v);
}

int run_and_print(const lago::io::RunConfig& rc, int threads) {
  lago::StudyMetrics metrics;
  const json out = lago::io::execute(rc, threads, &metrics);
  std::cout << out.dump(2) << '\n';
  if (rc.command == lago::io::Command::simulate) print_metrics_table(metrics);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn-as-you-go trial toolkit"};
  app.require_subcommand(1);

  std::string config, output_dir;
  int threads = 0;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo study from a config file");
  simulate->add_option("-c,--config", config, "JSON config")->required()->check(CLI::ExistingFile);
  simulate->add_option("-t,--threads", threads, "worker threads (default LAGO_THREADS or all cores)");
  simulate->add_option("-o,--output-dir", output_dir, "override the config's output_dir");

  auto* run = app.add_subcommand("run", "Execute any config (simulate, fit, recommend, confset)");
  run->add_option("-c,--config", config, "JSON config")->required()->check(CLI::ExistingFile);
  run->add_option("-t,--threads", threads, "worker threads");
  run->add_option("-o,--output-dir", output_dir, "override the config's output_dir");

  std::string csv, link = "identity";
  bool no_intercept = false;
  auto* fit = app.add_subcommand("fit", "Fit the outcome model to a trial CSV");
  fit->add_option("--csv", csv, "trial data")->required()->check(CLI::ExistingFile);
  fit->add_option("--link", link, "identity, logit or log");
  fit->add_flag("--no-intercept", no_intercept, "fix the intercept at 0");

  std::string fit_path, cost_spec, bounds_spec, z_arg;
  double theta = 0.0, increment = 0.01, level = 0.95;
  auto* rec = app.add_subcommand("recommend", "Cheapest package reaching theta");
  rec->add_option("--fit", fit_path, "fit JSON from `lago fit`")->required()->check(CLI::ExistingFile);
  rec->add_option("--cost", cost_spec, "linear:c1,c2 or cubic:a,b,c,d;a,b,c,d")->required();
  rec->add_option("--theta", theta, "target mean outcome")->required();
  rec->add_option("--bounds", bounds_spec, "lo:hi per component, e.g. 0:2,0:8")->required();
  rec->add_option("--z", z_arg, "center covariates, comma separated");
  rec->add_option("--increment", increment, "grid increment for non-linear costs");

  double set_increment = 0.1, band_increment = 0.1;
  auto* cs = app.add_subcommand("confset", "Confidence set and simultaneous bands on a grid");
  cs->add_option("--fit", fit_path, "fit JSON")->required()->check(CLI::ExistingFile);
  cs->add_option("--theta", theta, "target mean outcome")->required();
  cs->add_option("--bounds", bounds_spec, "lo:hi per component")->required();
  cs->add_option("--z", z_arg, "center covariates");
  cs->add_option("--increment", set_increment, "confidence set grid increment");
  cs->add_option("--band-increment", band_increment, "band grid increment");
  cs->add_option("--level", level, "confidence level");
  cs->add_option("--cost", cost_spec, "cost for set quartiles");

  int port = 8080;
  std::string store_dir, host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "Serve the steering HTTP API");
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--store", store_dir, "directory of trial logs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate || *run) {
      auto rc = lago::io::load_run_config(config);
      if (*simulate && rc.command != lago::io::Command::simulate) {
        throw lago::ValidationError("command", "simulate needs a simulate config; use `lago run`");
      }
      if (!output_dir.empty()) rc.output_dir = output_dir;
      return run_and_print(rc, threads);
    }
    if (*fit) {
      const auto data = lago::io::load_trial_csv(csv);
      lago::FitOptions o;
      o.intercept = !no_intercept;
      const auto f = lago::fit_gee(data, lago::LinkFunction(lago::parse_link(link)), o);
      std::cout << lago::io::fit_report(f, data).dump(2) << '\n';
      print_fit_table(f);
      return 0;
    }
    if (*rec) {
      const auto f = load_fit_file(fit_path);
      const auto cf = lago::io::parse_cost_spec(cost_spec);
      const auto bounds = lago::io::parse_bounds_spec(bounds_spec);
      const auto z = covariates_arg(z_arg, f.covariates());
      lago::GridOptions grid;
      grid.increment = increment;
      const auto r = lago::recommend(f.beta_hat, z, bounds, cf, lago::TargetSpec{theta}, f.link, grid);
      json out = {{"schema_version", lago::io::kSchemaVersion},
                  {"recommendation", lago::io::to_json(r)},
                  {"mean_ci", lago::io::to_json(lago::mean_ci(f, r.package, z))}};
      std::cout << out.dump(2) << '\n';
      std::fprintf(stderr, "package");
      for (double x : r.package.doses()) std::fprintf(stderr, " %.4g", x);
      std::fprintf(stderr, "  mean %.4f  cost %.2f  %s%s\n", r.projected_mean, r.cost,
                   std::string(lago::to_string(r.method)).c_str(), r.feasible ? "" : "  (infeasible)");
      return 0;
    }
    if (*cs) {
      const auto f = load_fit_file(fit_path);
      const auto bounds = lago::io::parse_bounds_spec(bounds_spec);
      const auto z = covariates_arg(z_arg, f.covariates());
      const auto set = lago::confidence_set(f, bounds, z, lago::TargetSpec{theta}, set_increment, level);
      const auto bands = lago::confidence_bands(f, bounds, z, band_increment, level);
      json out = {{"schema_version", lago::io::kSchemaVersion},
                  {"confidence_set", lago::io::to_json(set)},
                  {"bands", lago::io::to_json(bands)}};
      if (!cost_spec.empty() && !set.members.empty()) {
        const auto q = lago::cost_quartiles(set, lago::io::parse_cost_spec(cost_spec));
        out["cost_quartiles"] = {{"q1", q.q1}, {"median", q.q2}, {"q3", q.q3}};
      }
      std::cout << out.dump(2) << '\n';
      std::fprintf(stderr, "confidence set: %zu of %zu grid points (%.1f%%)\n", set.members.size(),
                   set.total_grid_points, 100.0 * set.set_percentage());
      return 0;
    }
    if (*serve) {
      lago::service::TrialStore store(store_dir);
      lago::service::TrialService svc(store);
      httplib::Server server;
      lago::service::mount(server, svc);
      std::fprintf(stderr, "serving on http://%s:%d (store %s, %zu trials)\n", host.c_str(), port, store_dir.c_str(),
                   store.ids().size());
      if (!server.listen(host, port)) {
        std::fprintf(stderr, "error: cannot listen on %s:%d\n", host.c_str(), port);
        return 1;
      }
      return 0;
    }
  } catch (const lago::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const lago::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
