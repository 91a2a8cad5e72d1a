#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lago/error.hpp"
#include "lago/model.hpp"

namespace lago {

enum class Arm { intervention, control };

inline std::string_view to_string(Arm arm) {
  return arm == Arm::intervention ? "intervention" : "control";
}

inline Arm parse_arm(std::string_view s) {
  if (s == "intervention") return Arm::intervention;
  if (s == "control") return Arm::control;
  throw ValidationError("arm", "unknown arm '" + std::string(s) +
                                   "' (expected intervention or control)");
}

struct TrialRow {
  int stage = 1;
  std::string center_id;
  Arm arm = Arm::intervention;
  Vector a;  // implemented package
  Vector z;  // center covariates
  double y = 0.0;
};

/// A dataset invariant failed at `row` (0-based; npos for whole-dataset
/// checks) in column `field` ("a", "z", "arm" or "stage").
class InvariantError : public ValidationError {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  InvariantError(std::size_t row, std::string field, const std::string& message)
      : ValidationError(row == npos ? field : "rows[" + std::to_string(row) + "]." + field, message),
        row_(row),
        field_(std::move(field)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t row_;
  std::string field_;
};

/// Stage/center/arm structured outcomes. Rows are kept in insertion order.
///
/// Invariants enforced by validate():
///  - every (stage, center) group has one package, covariate vector and arm,
///  - stages are exactly 1..K,
///  - control rows carry the zero package.
class TrialDataset {
 public:
  TrialDataset() = default;
  TrialDataset(std::size_t components, std::size_t covariates)
      : components_(components), covariates_(covariates) {}

  std::size_t components() const noexcept { return components_; }
  std::size_t covariates() const noexcept { return covariates_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const std::vector<TrialRow>& rows() const noexcept { return rows_; }

  int stages() const {
    int k = 0;
    for (const auto& r : rows_) k = std::max(k, r.stage);
    return k;
  }

  /// Appends a row, checking row-level shape only. Call validate() for the
  /// group-level invariants.
  void add(TrialRow row) {
    if (static_cast<std::size_t>(row.a.size()) != components_) {
      throw DimensionError("row package length", components_, static_cast<std::size_t>(row.a.size()));
    }
    if (static_cast<std::size_t>(row.z.size()) != covariates_) {
      throw DimensionError("row covariate length", covariates_, static_cast<std::size_t>(row.z.size()));
    }
    if (row.stage < 1) throw ValidationError("stage", "stage must be >= 1");
    if (!std::isfinite(row.y) || !row.a.allFinite() || !row.z.allFinite()) {
      throw ValidationError("row", "values must be finite");
    }
    rows_.push_back(std::move(row));
  }

  void append(const TrialDataset& other) {
    if (other.components_ != components_ || other.covariates_ != covariates_) {
      throw DimensionError("appended dataset components", components_, other.components_);
    }
    rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
  }

  /// Rows with stage <= k.
  TrialDataset through_stage(int k) const {
    TrialDataset out(components_, covariates_);
    for (const auto& r : rows_) {
      if (r.stage <= k) out.rows_.push_back(r);
    }
    return out;
  }

  /// Rows with stage == k, relabelled as stage 1 when `relabel` is set.
  TrialDataset only_stage(int k, bool relabel = false) const {
    TrialDataset out(components_, covariates_);
    for (const auto& r : rows_) {
      if (r.stage == k) {
        out.rows_.push_back(r);
        if (relabel) out.rows_.back().stage = 1;
      }
    }
    return out;
  }

  std::vector<std::size_t> stage_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(stages()), 0);
    for (const auto& r : rows_) ++sizes[static_cast<std::size_t>(r.stage - 1)];
    return sizes;
  }

  std::size_t arm_size(Arm arm) const {
    return static_cast<std::size_t>(
        std::count_if(rows_.begin(), rows_.end(), [arm](const TrialRow& r) { return r.arm == arm; }));
  }

  /// Throws ValidationError naming the first violated invariant.
  void validate() const {
    struct Group {
      std::size_t first_row;
      const TrialRow* row;
    };
    std::map<std::pair<int, std::string>, Group> groups;
    std::vector<bool> seen_stage;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      if (r.arm == Arm::control && !(r.a.array() == 0.0).all()) {
        throw InvariantError(i, "a", "control row for center '" + r.center_id +
                                                "' must carry the zero package");
      }
      if (static_cast<std::size_t>(r.stage) > seen_stage.size()) {
        seen_stage.resize(static_cast<std::size_t>(r.stage), false);
      }
      seen_stage[static_cast<std::size_t>(r.stage - 1)] = true;
      auto [it, inserted] = groups.try_emplace({r.stage, r.center_id}, Group{i, &r});
      if (!inserted) {
        const TrialRow& g = *it->second.row;
        if (g.a != r.a) {
          throw InvariantError(i, "a", "center '" + r.center_id + "' in stage " +
                                                  std::to_string(r.stage) +
                                                  " has more than one package");
        }
        if (g.z != r.z) {
          throw InvariantError(i, "z", "center '" + r.center_id + "' in stage " +
                                                  std::to_string(r.stage) +
                                                  " has more than one covariate vector");
        }
        if (g.arm != r.arm) {
          throw InvariantError(i, "arm", "center '" + r.center_id + "' in stage " +
                                                    std::to_string(r.stage) + " is in both arms");
        }
      }
    }
    for (std::size_t k = 0; k < seen_stage.size(); ++k) {
      if (!seen_stage[k]) {
        throw InvariantError(InvariantError::npos, "stage", "stages must be contiguous from 1; stage " +
                                           std::to_string(k + 1) + " is missing");
      }
    }
  }

 private:
  std::size_t components_ = 0;
  std::size_t covariates_ = 0;
  std::vector<TrialRow> rows_;
};

}  // namespace lago
