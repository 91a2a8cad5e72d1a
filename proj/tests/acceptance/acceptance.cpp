// Acceptance checks: one PASS/FAIL line per criterion. With --only=N a single
// criterion runs and the exit status reflects it; otherwise all run and the
// status is non-zero if any failed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../unit/support.hpp"
#include "lago/io/config.hpp"
#include "lago/io/csv.hpp"
#include "lago/io/json.hpp"
#include "lago/simulation.hpp"

#include <CLI11.hpp>

namespace {

using namespace lago;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol + 1e-12; }

// Studies are run at most once per process and shared between criteria.
class Studies {
 public:
  explicit Studies(std::string dir, int threads) : dir_(std::move(dir)), threads_(threads) {}

  const StudyMetrics& get(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const DesignSpec spec = io::load_design(dir_ + "/" + name + ".json");
    std::fprintf(stderr, "  running %s (R=%d)\n", name.c_str(), spec.replications);
    StudyMetrics m = run_study(spec, threads_);
    note_score(m.max_score_norm);
    return cache_.emplace(name, std::move(m)).first->second;
  }

  DesignSpec spec(const std::string& name) const { return io::load_design(dir_ + "/" + name + ".json"); }

  void note_score(double u) { max_score_ = std::max(max_score_, u); }
  double max_score() const { return max_score_; }
  int threads() const { return threads_; }

 private:
  std::string dir_;
  int threads_;
  std::map<std::string, StudyMetrics> cache_;
  double max_score_ = 0.0;
};

const StageMetrics& final_stage(const StudyMetrics& m) { return m.stages.back(); }

Outcome sim1_coefficients(Studies& s) {
  const auto& st = final_stage(s.get("sim1"));
  // No intercept is fitted, so coefficients are (a_1, a_2, z_1).
  const auto& b11 = st.coefficients[0];
  const auto& b12 = st.coefficients[1];
  const bool ok = within(b11.cp95, 0.95, 0.03) && within(b12.cp95, 0.95, 0.03) && std::abs(b11.rel_bias_pct) <= 4.0;
  return {ok, "CP95(b11)=" + fmt("%.3f", b11.cp95) + " CP95(b12)=" + fmt("%.3f", b12.cp95) +
                  " %RelBias(b11)=" + fmt("%.2f", b11.rel_bias_pct)};
}

Outcome sim1_optimizer(Studies& s) {
  const auto& st = final_stage(s.get("sim1"));
  bool ok = st.rmse <= 0.45;
  std::string d = "bias=(";
  for (std::size_t p = 0; p < st.optimizer_bias.size(); ++p) {
    ok = ok && std::abs(st.optimizer_bias[p]) <= 0.03;
    d += (p ? ", " : "") + fmt("%.4f", st.optimizer_bias[p]);
  }
  return {ok, d + ") rMSE=" + fmt("%.3f", st.rmse)};
}

Outcome sim1_sets(Studies& s) {
  const auto& m = s.get("sim1");
  const auto& st = final_stage(m);
  const bool ok = within(m.set_cp95, 0.95, 0.03) && within(m.bands_cp95, 0.95, 0.03) &&
                  within(st.mean_opt_q025, 0.789, 0.02) && within(st.mean_opt_q975, 0.811, 0.02);
  return {ok, "SetCP95=" + fmt("%.3f", m.set_cp95) + " BandsCP95=" + fmt("%.3f", m.bands_cp95) + " MeanOpt=[" +
                  fmt("%.4f", st.mean_opt_q025) + ", " + fmt("%.4f", st.mean_opt_q975) + "]"};
}

Outcome sim2_cubic(Studies& s) {
  const auto& m = s.get("sim2b_cubic");
  const auto& st = final_stage(m);
  const bool ok = within(m.set_cp95, 0.95, 0.03) && st.rmse <= 0.85;
  return {ok, "SetCP95=" + fmt("%.3f", m.set_cp95) + " rMSE=" + fmt("%.3f", st.rmse)};
}

Outcome sim3_null(Studies& s) {
  const auto& c = s.get("sim3_clago_null");
  const auto& uv = s.get("sim3_uvlago_null");
  const bool ok = within(c.power_wald, 0.05, 0.025) && c.power_two_sample <= 0.07 + 1e-12;
  return {ok, "c-LAGO component-wise=" + fmt("%.3f", c.power_wald) + " two-sample=" + fmt("%.3f", c.power_two_sample) +
                  " (failed fits " + std::to_string(c.failures) + "/" + std::to_string(c.replications) +
                  "); uv-LAGO " + fmt("%.3f", uv.power_wald) + "/" + fmt("%.3f", uv.power_two_sample)};
}

Outcome sim4_ordering(Studies& s) {
  const double lago = s.get("sim4_clago").power_two_sample;
  const double fact = s.get("sim4_factorial").power_two_sample;
  const double most = s.get("sim4_most").power_two_sample;
  const bool order = lago - fact >= 0.15 && lago - most >= 0.15;
  const bool abs = within(lago, 0.871, 0.07) && within(fact, 0.529, 0.07) && within(most, 0.489, 0.07);
  return {order && abs, "power c-LAGO=" + fmt("%.3f", lago) + " factorial=" + fmt("%.3f", fact) +
                            " MOST=" + fmt("%.3f", most) + " ordering " + (order ? "ok" : "violated") +
                            ", absolute " + (abs ? "ok" : "outside +-0.07")};
}

Outcome betterbirth(Studies& s) {
  const auto data = io::load_trial_csv(std::string(LAGO_FIXTURE_DIR) + "/betterbirth.csv");
  FitResult fit = fit_gee(data, LinkFunction(LinkKind::logit));
  s.note_score(fit.final_residual_norm);
  // Reported final-stage estimates; coaching is per visit (0.172 per 5 visits).
  fit.beta_hat = ParameterVector(-0.138, (Vector(2) << 0.17, 0.172 / 5.0).finished(), Vector::Constant(1, -0.202));
  const CenterCovariates z{1.75};
  const ComponentBounds bounds((Vector(2) << 1, 1).finished(), (Vector(2) << 5, 40).finished());
  const auto cost = CostFunction::linear((Vector(2) << 800, 170).finished());
  GridOptions natural;
  natural.increment = 1.0;
  const auto r = recommend_grid(fit.beta_hat, z, bounds, cost, TargetSpec{0.8}, fit.link, natural);
  const auto cont = recommend(fit.beta_hat, z, bounds, cost, TargetSpec{0.8}, fit.link);
  const Vector target = (Vector(2) << 5, 31).finished();
  const auto ci = mean_ci(fit, InterventionPackage(target), z);
  const bool pkg_ok = r.feasible && (r.package.doses() - target).cwiseAbs().maxCoeff() == 0.0 &&
                      std::abs(r.cost - 9270.0) < 1e-9;
  const bool ci_ok = within(ci.lower, 0.766, 0.005) && within(ci.upper, 0.834, 0.005);
  return {pkg_ok && ci_ok,
          "package=(" + fmt("%g", r.package.doses()[0]) + ", " + fmt("%g", r.package.doses()[1]) + ") cost=" +
              fmt("%.0f", r.cost) + " (continuous optimum (" + fmt("%.2f", cont.package.doses()[0]) + ", " +
              fmt("%.2f", cont.package.doses()[1]) + ")), mean_ci(5, 31)=(" + fmt("%.4f", ci.lower) + ", " +
              fmt("%.4f", ci.upper) + ")"};
}

Outcome optimizer_oracle(Studies&) {
  std::mt19937_64 rng(20240601);
  int agree = 0;
  const int total = 200;
  std::string first_miss;
  for (int t = 0; t < total; ++t) {
    const auto kind = std::array{LinkKind::identity, LinkKind::log, LinkKind::logit}[t % 3];
    const auto cost_kind = (t / 3) % 2 ? CostKind::cubic : CostKind::linear;
    const auto pr = testing::random_problem(rng, kind, cost_kind);
    const auto r = recommend(pr.beta, pr.z, pr.bounds, pr.cf, TargetSpec{pr.theta}, pr.link);
    const auto brute = testing::brute_force_grid(pr.beta, pr.z, pr.bounds, pr.cf, pr.theta, pr.link, 0.05);
    const double delta = testing::cell_cost_delta(pr.bounds, pr.cf, 0.05);
    bool ok = r.feasible == brute.package.has_value();
    if (ok && r.feasible) ok = std::abs(r.cost - brute.cost) <= delta + 1e-9;
    agree += ok;
    if (!ok && first_miss.empty()) first_miss = " first disagreement at problem " + std::to_string(t);
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) + " agree" + first_miss};
}

Outcome estimation_oracle(Studies& s) {
  std::mt19937_64 rng(8675309);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const ParameterVector beta(0.3, (Vector(2) << 0.5, -0.2).finished(), Vector::Constant(1, 0.4));
    const auto d = testing::random_dataset(rng, LinkFunction(LinkKind::identity), beta, 10 + t % 7, 4 + t % 5,
                                           0.5 + 0.05 * t);
    const auto fit = fit_gee(d, LinkFunction(LinkKind::identity));
    s.note_score(fit.final_residual_norm);
    worst = std::max(worst, (fit.covariance - testing::hc0_oracle(d)).cwiseAbs().maxCoeff());
  }
  // The score bound covers every fit in the suite, so make sure the studies ran.
  for (const char* name : {"sim1", "sim2b_cubic", "sim3_clago_null", "sim3_uvlago_null", "sim4_clago",
                           "sim4_factorial", "sim4_most"}) {
    s.get(name);
  }
  const bool ok = worst <= 1e-8 && s.max_score() <= 1e-8;
  return {ok, "max |cov - HC0| = " + fmt("%.2e", worst) + ", max |U(beta_hat)| over all fits = " +
                  fmt("%.2e", s.max_score())};
}

Outcome reproducibility(Studies& s) {
  std::string mismatched;
  int checked = 0;
  for (const char* name : {"sim1_small", "sim3_clago", "sim4_most", "sim4_factorial"}) {
    DesignSpec spec = s.spec(name);
    spec.replications = std::min(spec.replications, 40);
    const std::string one = io::to_json(run_study(spec, 1)).dump();
    const std::string four = io::to_json(run_study(spec, 4)).dump();
    const std::string again = io::to_json(run_study(spec, 3)).dump();
    ++checked;
    if (one != four || one != again) mismatched += std::string(" ") + name;
  }
  return {mismatched.empty(), std::to_string(checked) + " studies, threads 1/3/4" +
                                  (mismatched.empty() ? ": byte-identical" : ": differ for" + mismatched)};
}

struct Criterion {
  const char* name;
  std::function<Outcome(Studies&)> check;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  int threads = 0;
  std::string configs = LAGO_CONFIG_DIR;
  app.add_option("--only", only, "run a single criterion (1-based)");
  app.add_option("--threads", threads, "worker threads for the studies");
  app.add_option("--configs", configs, "directory holding the study configs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {"Simulation 1 coefficients", sim1_coefficients},
      {"Simulation 1 optimizer", sim1_optimizer},
      {"Simulation 1 sets and bands", sim1_sets},
      {"Simulation 2 cubic cost", sim2_cubic},
      {"Simulation 3 null type-1 error", sim3_null},
      {"Simulation 4 power ordering", sim4_ordering},
      {"BetterBirth recommendation", betterbirth},
      {"Optimizer oracle", optimizer_oracle},
      {"Estimation oracle", estimation_oracle},
      {"Reproducibility", reproducibility},
  };
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::fprintf(stderr, "--only must be in 1..%zu\n", criteria.size());
    return 2;
  }

  Studies studies(configs, threads);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    try {
      o = criteria[i].check(studies);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
