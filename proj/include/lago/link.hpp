#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "lago/error.hpp"

namespace lago {

enum class LinkKind { identity, log, logit };

inline std::string_view to_string(LinkKind kind) {
  switch (kind) {
    case LinkKind::identity: return "identity";
    case LinkKind::log: return "log";
    case LinkKind::logit: return "logit";
  }
  return "unknown";
}

inline LinkKind parse_link(std::string_view name) {
  if (name == "identity") return LinkKind::identity;
  if (name == "log") return LinkKind::log;
  if (name == "logit") return LinkKind::logit;
  throw ValidationError("link", "unknown link '" + std::string(name) +
                                    "' (expected identity, log or logit)");
}

// Link g and its inverse with the first two derivatives of the inverse with
// respect to the linear predictor. All three inverses are strictly increasing.
class LinkFunction {
 public:
  constexpr LinkFunction() = default;
  constexpr explicit LinkFunction(LinkKind kind) : kind_(kind) {}

  constexpr LinkKind kind() const noexcept { return kind_; }

  // g(mu). Outside the valid range (mu <= 0 for log, mu outside (0,1) for
  // logit) the result is NaN or infinite, matching std::log.
  double link(double mu) const {
    switch (kind_) {
      case LinkKind::identity: return mu;
      case LinkKind::log: return std::log(mu);
      case LinkKind::logit: return std::log(mu) - std::log1p(-mu);
    }
    return mu;
  }

  double inverse(double eta) const {
    switch (kind_) {
      case LinkKind::identity: return eta;
      case LinkKind::log: return std::exp(eta);
      case LinkKind::logit: return expit(eta);
    }
    return eta;
  }

  double inverse_d1(double eta) const {
    switch (kind_) {
      case LinkKind::identity: return 1.0;
      case LinkKind::log: return std::exp(eta);
      case LinkKind::logit: {
        const double p = expit(eta);
        return p * expit(-eta);
      }
    }
    return 1.0;
  }

  double inverse_d2(double eta) const {
    switch (kind_) {
      case LinkKind::identity: return 0.0;
      case LinkKind::log: return std::exp(eta);
      case LinkKind::logit: {
        const double p = expit(eta);
        const double q = expit(-eta);
        return p * q * (q - p);
      }
    }
    return 0.0;
  }

  // True when mu lies in the open range where g is finite.
  bool in_range(double mu) const {
    switch (kind_) {
      case LinkKind::identity: return std::isfinite(mu);
      case LinkKind::log: return mu > 0.0 && std::isfinite(mu);
      case LinkKind::logit: return mu > 0.0 && mu < 1.0;
    }
    return false;
  }

  friend constexpr bool operator==(LinkFunction a, LinkFunction b) { return a.kind_ == b.kind_; }

 private:
  // exp is only ever taken of a non-positive argument, so no overflow.
  static double expit(double eta) {
    if (eta >= 0.0) {
      return 1.0 / (1.0 + std::exp(-eta));
    }
    const double e = std::exp(eta);
    return e / (1.0 + e);
  }

  LinkKind kind_ = LinkKind::identity;
};

}  // namespace lago
