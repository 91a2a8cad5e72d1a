#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "lago/optimizer.hpp"
#include "support.hpp"

using namespace lago;
using lago::testing::sim1_beta;

namespace {

const LinkFunction kLogit(LinkKind::logit);

ComponentBounds sim1_bounds() {
  return ComponentBounds((Vector(2) << 0, 0).finished(), (Vector(2) << 2, 8).finished());
}

CostFunction sim1_linear() { return CostFunction::linear((Vector(2) << 8, 2).finished()); }

CostFunction sim2_cubic() {
  Matrix coef(2, 4);
  coef << 0.05, -1.19, 10, 10, 0.1, -0.7, 2, 0;
  return CostFunction::cubic(coef);
}

}  // namespace

TEST(RecommendLinear, Sim1TrueOptimum) {
  const auto r = recommend_linear(sim1_beta(), CenterCovariates::zeros(1), sim1_bounds(), sim1_linear(),
                                  TargetSpec{0.8}, kLogit);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.method, OptimizerMethod::linear_ranking);
  EXPECT_NEAR(r.package[0], 1.0, 1e-3);
  EXPECT_NEAR(r.package[1], 8.0, 1e-12);
  EXPECT_NEAR(r.projected_mean, 0.8, 1e-12);
}

TEST(RecommendLinear, Sim1SecondScenario) {
  const auto r = recommend_linear(sim1_beta(0.1, 0.2133), CenterCovariates::zeros(1), sim1_bounds(),
                                  sim1_linear(), TargetSpec{0.8}, kLogit);
  EXPECT_NEAR(r.package[0], 0.0, 1e-12);
  EXPECT_NEAR(r.package[1], 6.5, 1e-3);
}

TEST(RecommendLinear, SlackAtLowerBounds) {
  ParameterVector beta(1.0, (Vector(2) << 0.5, 0.5).finished(), Vector(0));
  const auto r = recommend_linear(beta, CenterCovariates(), sim1_bounds(), sim1_linear(), TargetSpec{0.5},
                                  LinkFunction(LinkKind::identity));
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.package, InterventionPackage({0.0, 0.0}));
  EXPECT_EQ(r.cost, 0.0);
}

TEST(RecommendLinear, NegativeEffectPinnedAtLower) {
  ParameterVector beta(0.0, (Vector(2) << -0.3, 0.2).finished(), Vector(0));
  const auto r = recommend_linear(beta, CenterCovariates(), sim1_bounds(), sim1_linear(), TargetSpec{1.0},
                                  LinkFunction(LinkKind::identity));
  EXPECT_EQ(r.package[0], 0.0);
  EXPECT_NEAR(r.package[1], 5.0, 1e-12);
}

TEST(RecommendLinear, TieGoesToLowerIndex) {
  // 0.16 / 8 == 0.04 / 2.
  ParameterVector beta(0.0, (Vector(2) << 0.16, 0.04).finished(), Vector(0));
  const auto r = recommend_linear(beta, CenterCovariates(), sim1_bounds(), sim1_linear(), TargetSpec{0.16},
                                  LinkFunction(LinkKind::identity));
  EXPECT_NEAR(r.package[0], 1.0, 1e-12);
  EXPECT_EQ(r.package[1], 0.0);
}

TEST(Recommend, ZeroEffectFallsBack) {
  ParameterVector beta(0.0, Vector::Zero(2), Vector::Zero(1));
  for (auto cf : {sim1_linear(), sim2_cubic()}) {
    const auto r = recommend(beta, CenterCovariates::zeros(1), sim1_bounds(), cf, TargetSpec{0.8}, kLogit);
    EXPECT_FALSE(r.feasible);
    EXPECT_EQ(r.method, OptimizerMethod::fallback_upper_bounds);
    EXPECT_EQ(r.package, InterventionPackage({2.0, 8.0}));
  }
}

TEST(Recommend, DispatchIdentity) {
  const auto z = CenterCovariates::zeros(1);
  const auto a = recommend(sim1_beta(), z, sim1_bounds(), sim1_linear(), TargetSpec{0.75}, kLogit);
  const auto b = recommend_linear(sim1_beta(), z, sim1_bounds(), sim1_linear(), TargetSpec{0.75}, kLogit);
  EXPECT_EQ(a.package, b.package);
  const auto c = recommend(sim1_beta(), z, sim1_bounds(), sim2_cubic(), TargetSpec{0.75}, kLogit);
  const auto d = recommend_grid(sim1_beta(), z, sim1_bounds(), sim2_cubic(), TargetSpec{0.75}, kLogit);
  EXPECT_EQ(c.package, d.package);
  EXPECT_EQ(c.method, OptimizerMethod::grid_search);
}

// Under the cubic cost as printed the cheapest feasible grid point is
// (2, 6.76), cost 38.0633; the published (1.5, 7.4) costs 39.48 there.
TEST(RecommendGrid, Sim2CubicOptimum) {
  const auto r = recommend_grid(sim1_beta(), CenterCovariates::zeros(1), sim1_bounds(), sim2_cubic(),
                                TargetSpec{0.8}, kLogit);
  EXPECT_TRUE(r.feasible);
  EXPECT_NEAR(r.package[0], 2.0, 1e-9);
  EXPECT_NEAR(r.package[1], 6.76, 1e-9);
  EXPECT_NEAR(r.cost, 38.0632576, 1e-6);
  EXPECT_LT(r.cost, cost(sim2_cubic(), {1.5, 7.4}));
}

// A quadratic launch-day coefficient of -0.119 instead of -1.19 moves the
// optimum to the published (1.5, 7.4).
TEST(RecommendGrid, Sim2CubicWithSmallerQuadraticTerm) {
  Matrix coef(2, 4);
  coef << 0.05, -0.119, 10, 10, 0.1, -0.7, 2, 0;
  const auto r = recommend_grid(sim1_beta(), CenterCovariates::zeros(1), sim1_bounds(), CostFunction::cubic(coef),
                                TargetSpec{0.8}, kLogit);
  EXPECT_NEAR(r.package[0], 1.5, 0.05);
  EXPECT_NEAR(r.package[1], 7.4, 0.05);
}

TEST(RecommendGrid, GridCapEnforced) {
  GridOptions g;
  g.increment = 1e-4;
  g.max_cells = 1e6;
  EXPECT_THROW(recommend_grid(sim1_beta(), CenterCovariates::zeros(1), sim1_bounds(), sim2_cubic(),
                              TargetSpec{0.8}, kLogit, g),
               ValidationError);
}

// The separable search must agree exactly with plain enumeration at the same
// increment, including the lexicographic tie-break.
TEST(RecommendGrid, MatchesPlainEnumeration) {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 60; ++t) {
    const auto kind = std::array{LinkKind::identity, LinkKind::log, LinkKind::logit}[t % 3];
    auto pr = lago::testing::random_problem(rng, kind, t % 2 ? CostKind::cubic : CostKind::linear);
    GridOptions g;
    g.increment = 0.05;
    const auto r = recommend_grid(pr.beta, pr.z, pr.bounds, pr.cf, TargetSpec{pr.theta}, pr.link, g);
    const auto brute = lago::testing::brute_force_grid(pr.beta, pr.z, pr.bounds, pr.cf, pr.theta, pr.link, 0.05);
    ASSERT_EQ(r.feasible, brute.package.has_value()) << t;
    if (r.feasible) {
      EXPECT_NEAR(r.cost, brute.cost, 1e-9 * std::max(1.0, brute.cost)) << t;
      EXPECT_LE((r.package.doses() - *brute.package).cwiseAbs().maxCoeff(), 1e-9) << t;
    }
  }
}

TEST(RecommendGrid, LinearCostAgreesWithRanking) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.05, 0.4);
  for (int t = 0; t < 50; ++t) {
    const double b11 = u(rng), b12 = u(rng);
    const auto beta = sim1_beta(b11, b12);
    const auto z = CenterCovariates::zeros(1);
    const double theta = kLogit.inverse(0.2 + 1.2 * (u(rng) - 0.05) / 0.35);
    const auto a = recommend_linear(beta, z, sim1_bounds(), sim1_linear(), TargetSpec{theta}, kLogit);
    const auto b = recommend_grid(beta, z, sim1_bounds(), sim1_linear(), TargetSpec{theta}, kLogit);
    ASSERT_EQ(a.feasible, b.feasible);
    // Rounding one component up can free enough slack to lower another by
    // more than one step, so packages may differ; costs may not by more than
    // one cell.
    if (a.feasible) {
      EXPECT_GE(b.cost, a.cost - 1e-9);
      EXPECT_LE(b.cost, a.cost + (8 + 2) * 0.01 + 1e-9) << t;
    }
  }
}

TEST(RecommendProperties, WithinBoundsAndConsistent) {
  std::mt19937_64 rng(47);
  for (int t = 0; t < 120; ++t) {
    const auto kind = std::array{LinkKind::identity, LinkKind::log, LinkKind::logit}[t % 3];
    auto pr = lago::testing::random_problem(rng, kind, t % 2 ? CostKind::cubic : CostKind::linear);
    GridOptions g;
    g.increment = 0.05;
    const auto r = recommend(pr.beta, pr.z, pr.bounds, pr.cf, TargetSpec{pr.theta}, pr.link, g);
    EXPECT_TRUE(pr.bounds.contains(r.package));
    EXPECT_NEAR(r.projected_mean, mean_response(pr.link, pr.beta, r.package, pr.z), 1e-12);
    if (r.feasible) {
      EXPECT_GE(r.projected_mean, pr.theta - 1e-9 * std::abs(pr.theta));
    }
  }
}

TEST(RecommendProperties, LinearBindsAndScaleInvariant) {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 100; ++t) {
    const auto kind = std::array{LinkKind::identity, LinkKind::log, LinkKind::logit}[t % 3];
    auto pr = lago::testing::random_problem(rng, kind, CostKind::linear);
    const auto r = recommend_linear(pr.beta, pr.z, pr.bounds, pr.cf, TargetSpec{pr.theta}, pr.link);
    const bool at_lower = (r.package.doses() - pr.bounds.lower()).cwiseAbs().maxCoeff() == 0.0;
    if (r.feasible && !at_lower) {
      EXPECT_NEAR(pr.link.link(r.projected_mean), pr.link.link(pr.theta), 1e-9);
    }
    const auto scaled = CostFunction::linear(pr.cf.unit_costs() * 3.7, pr.cf.constant());
    const auto s = recommend_linear(pr.beta, pr.z, pr.bounds, scaled, TargetSpec{pr.theta}, pr.link);
    EXPECT_EQ(s.package, r.package);
  }
}

TEST(RecommendProperties, CostMonotoneInTheta) {
  const auto z = CenterCovariates::zeros(1);
  double prev_linear = -1.0, prev_cubic = -1.0;
  GridOptions g;
  g.increment = 0.05;
  for (double theta = 0.5; theta <= 0.85; theta += 0.01) {
    const auto a = recommend(sim1_beta(), z, sim1_bounds(), sim1_linear(), TargetSpec{theta}, kLogit);
    const auto b = recommend(sim1_beta(), z, sim1_bounds(), sim2_cubic(), TargetSpec{theta}, kLogit, g);
    if (a.feasible) {
      EXPECT_GE(a.cost, prev_linear - 1e-12);
    }
    if (b.feasible) {
      EXPECT_GE(b.cost, prev_cubic - 1e-12);
    }
    prev_linear = a.cost;
    prev_cubic = b.cost;
  }
}

TEST(GridEnumeration, RowMajorAndComplete) {
  ComponentBounds b((Vector(2) << 0, 0).finished(), (Vector(2) << 0.2, 0.3).finished());
  std::vector<Vector> pts;
  for_each_grid_point(b, 0.1, 1e8, [&](const Vector& x) { pts.push_back(x); });
  ASSERT_EQ(pts.size(), 12u);
  EXPECT_NEAR(pts[1][1], 0.1, 1e-12);
  EXPECT_NEAR(pts[4][0], 0.1, 1e-12);
  EXPECT_NEAR(pts.back()[0], 0.2, 1e-12);
  EXPECT_NEAR(pts.back()[1], 0.3, 1e-12);
}

namespace {

FitResult identity_fit(double sigma2) {
  FitResult f;
  f.link = LinkFunction(LinkKind::identity);
  f.beta_hat = ParameterVector(0.0, Vector::Constant(1, 1.0), Vector(0));
  f.covariance = Matrix::Identity(2, 2) * 0.01;
  f.residual_variance = sigma2;
  return f;
}

Recommendation at_dose(const FitResult& f, double x) {
  Recommendation r;
  r.package = InterventionPackage{x};
  r.projected_mean = mean_response(f.link, f.beta_hat, r.package, CenterCovariates());
  return r;
}

}  // namespace

TEST(ProjectPower, ClosedForm) {
  const auto f = identity_fit(4.0);
  const std::size_t n = 50;
  const double effect = 2.0 * 2.0 * std::sqrt(2.0 / n);
  // Phi(2 - 1.96) + Phi(-2 - 1.96).
  EXPECT_NEAR(project_power(f, at_dose(f, effect), n, 0.05), 0.516, 5e-4);
  EXPECT_NEAR(project_power(f, at_dose(f, 0.0), n, 0.05), 0.05, 1e-12);
  EXPECT_THROW(project_power(f, at_dose(f, 1.0), 1, 0.05), ValidationError);
  EXPECT_THROW(project_power(identity_fit(0.0), at_dose(f, 1.0), 10, 0.05), Error);
}

TEST(ProjectPower, MonotoneInSampleSize) {
  std::mt19937_64 rng(59);
  std::uniform_real_distribution<double> u(0.01, 2.0);
  for (int t = 0; t < 100; ++t) {
    const auto f = identity_fit(u(rng));
    const auto r = at_dose(f, u(rng));
    double prev = 0.0;
    for (std::size_t n = 2; n < 400; n += 7) {
      const double p = project_power(f, r, n, 0.05);
      EXPECT_GE(p, prev - 1e-15);
      prev = p;
    }
  }
}

TEST(RecommendPowered, EscalatesUntilPowerMet) {
  FitResult f;
  f.link = LinkFunction(LinkKind::identity);
  f.beta_hat = ParameterVector(0.0, (Vector(2) << 0.3, 0.1).finished(), Vector(0));
  f.covariance = Matrix::Identity(3, 3) * 0.01;
  f.residual_variance = 1.0;
  ComponentBounds b((Vector(2) << 0, 0).finished(), (Vector(2) << 4, 10).finished());
  auto cf = CostFunction::linear((Vector(2) << 1, 1).finished());
  PowerTarget pt{0.9, 0.05, 50};
  const auto base = recommend(f.beta_hat, CenterCovariates(), b, cf, TargetSpec{0.2}, f.link);
  const auto r = recommend_powered(f, CenterCovariates(), b, cf, TargetSpec{0.2}, pt);
  EXPECT_LT(project_power(f, base, 50, 0.05), 0.9);
  EXPECT_NEAR(project_power(f, r, 50, 0.05), 0.9, 1e-6);
  EXPECT_GT(r.cost, base.cost);
  // Unreachable power: everything useful at its upper bound.
  PowerTarget huge{0.999999, 0.05, 3};
  const auto top = recommend_powered(f, CenterCovariates(), b, cf, TargetSpec{0.2}, huge);
  EXPECT_EQ(top.package, InterventionPackage({4.0, 10.0}));
}
