#pragma once

#include <random>
#include <string>

#include "lago/dataset.hpp"
#include "lago/link.hpp"
#include "lago/model.hpp"

namespace lago::testing {

// Random center-level dataset: J centers of n rows each, packages uniform on
// [0, hi]^P, covariates N(0, 1), outcomes g^{-1}(eta) + N(0, sigma^2).
inline TrialDataset random_dataset(std::mt19937_64& rng, LinkFunction link, const ParameterVector& beta,
                                   int centers, int per_center, double sigma, double hi = 2.0) {
  const std::size_t P = beta.components(), Q = beta.covariates();
  std::uniform_real_distribution<double> dose(0.0, hi);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrialDataset d(P, Q);
  for (int j = 0; j < centers; ++j) {
    Vector a(static_cast<Eigen::Index>(P)), z(static_cast<Eigen::Index>(Q));
    for (auto& v : a) v = dose(rng);
    for (auto& v : z) v = normal(rng);
    const double mu = link.inverse(linear_predictor(beta, a, z));
    for (int i = 0; i < per_center; ++i) {
      d.add({1, "c" + std::to_string(j), Arm::intervention, a, z, mu + sigma * normal(rng)});
    }
  }
  return d;
}

inline ParameterVector sim1_beta(double b11 = 0.1863, double b12 = 0.15) {
  return ParameterVector(0.0, (Vector(2) << b11, b12).finished(), Vector::Constant(1, -0.2));
}

}  // namespace lago::testing
