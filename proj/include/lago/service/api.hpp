#pragma once

#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>

#include "lago/io/json.hpp"
#include "lago/io/run.hpp"
#include "lago/service/store.hpp"

// The steering API. TrialService holds the request logic and returns a
// status plus JSON body; http.hpp adapts it to cpp-httplib.

namespace lago::service {

using Params = std::map<std::string, std::string>;

struct Response {
  int status = 200;
  json body;
};

inline json error_body(int status, const std::string& message, const std::string& path = "") {
  json err = {{"status", status}, {"message", message}};
  if (!path.empty()) err["path"] = path;
  return {{"schema_version", io::kSchemaVersion}, {"error", err}};
}

namespace detail {

inline const std::string* param(const Params& p, const std::string& key) {
  auto it = p.find(key);
  return it == p.end() || it->second.empty() ? nullptr : &it->second;
}

inline double number_param(const Params& p, const std::string& key, double fallback) {
  const std::string* v = param(p, key);
  if (!v) return fallback;
  const Vector x = io::parse_number_list(*v, key);
  if (x.size() != 1 || !std::isfinite(x[0])) throw ValidationError(key, "expected one finite number");
  return x[0];
}

inline int int_param(const Params& p, const std::string& key, int fallback) {
  const std::string* v = param(p, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const int n = std::stoi(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return n;
  } catch (const std::exception&) {
    throw ValidationError(key, "expected an integer");
  }
}

inline json snapshot_json(const StageSnapshot& s) {
  json rows = json::array();
  for (const auto& r : s.rows) rows.push_back(io::to_json(r));
  return {{"stage", s.stage},
          {"locked", s.locked},
          {"locked_at", s.locked ? json(s.locked_at) : json(nullptr)},
          {"n_rows", s.rows.size()},
          {"rows", rows},
          {"fit", s.locked ? s.fit : json(nullptr)},
          {"recommendation", s.locked ? s.recommendation : json(nullptr)}};
}

inline json state_json(const TrialState& st) {
  json stages = json::array();
  for (const auto& s : st.stages) stages.push_back(snapshot_json(s));
  return {{"schema_version", io::kSchemaVersion},
          {"trial", to_json(st.meta)},
          {"stages", stages},
          {"locked_stages", st.locked_stages()},
          {"open_stage", st.open_stage()},
          {"n_rows", st.row_count()}};
}

/// Stages included in an analysis: `through` if given, else everything.
inline int through_param(const Params& p, const TrialState& st) {
  const int through = int_param(p, "through", 0);
  if (through < 0 || through > static_cast<int>(st.stages.size())) {
    throw ValidationError("through", "must be between 1 and " + std::to_string(st.stages.size()));
  }
  return through;
}

inline FitResult fit_state(const TrialState& st, int through) {
  const TrialDataset d = st.dataset_through(through);
  if (d.empty()) throw ConflictError("no rows to fit");
  FitOptions o;
  o.intercept = st.meta.fit_intercept;
  return fit_gee(d, st.meta.link, o);
}

struct WhatIf {
  double theta;
  CostFunction cost;
  ComponentBounds bounds;
  CenterCovariates z;
};

// Query overrides for a what-if; anything omitted comes from the trial.
inline WhatIf what_if(const Params& p, const TrialMeta& m) {
  WhatIf w{m.theta, m.cost, m.bounds, CenterCovariates(m.z)};
  w.theta = number_param(p, "theta", m.theta);
  io::at_path("theta", [&] {
    TargetSpec{w.theta}.validate(m.link);
    return 0;
  });
  if (const std::string* c = param(p, "cost")) w.cost = io::parse_cost_spec(*c, "cost");
  if (const std::string* b = param(p, "bounds")) w.bounds = io::parse_bounds_spec(*b, "bounds");
  if (const std::string* z = param(p, "z")) {
    const Vector v = io::parse_number_list(*z, "z");
    if (static_cast<std::size_t>(v.size()) != m.covariates) {
      throw ValidationError("z", "expected " + std::to_string(m.covariates) + " values");
    }
    w.z = CenterCovariates(v);
  }
  if (w.cost.components() != m.components()) {
    throw ValidationError("cost", "expected " + std::to_string(m.components()) + " components");
  }
  if (w.bounds.size() != m.components()) {
    throw ValidationError("bounds", "expected " + std::to_string(m.components()) + " components");
  }
  return w;
}

inline json recommendation_json(const FitResult& fit, const WhatIf& w, double grid_increment) {
  GridOptions grid;
  grid.increment = grid_increment;
  const Recommendation r = recommend(fit.beta_hat, w.z, w.bounds, w.cost, TargetSpec{w.theta}, fit.link, grid);
  return {{"recommendation", io::to_json(r)},
          {"mean_ci", io::to_json(mean_ci(fit, r.package, w.z))},
          {"inputs",
           {{"theta", w.theta}, {"cost", io::to_json(w.cost)}, {"bounds", io::to_json(w.bounds)},
            {"z", io::to_json(w.z.values())}}}};
}

}  // namespace detail

class TrialService {
 public:
  explicit TrialService(TrialStore& store) : store_(store) {}

  template <typename F>
  Response guarded(F&& f) const {
    try {
      return f();
    } catch (const ParseError& e) {
      return {400, error_body(400, e.what(), "body")};
    } catch (const ValidationError& e) {
      return {400, error_body(400, e.what(), e.path().empty() ? "body" : e.path())};
    } catch (const NotFoundError& e) {
      return {404, error_body(404, e.what())};
    } catch (const ConflictError& e) {
      return {409, error_body(409, e.what())};
    } catch (const Error& e) {
      // Well-formed request the data cannot support (rank deficiency, no convergence).
      return {422, error_body(422, e.what())};
    } catch (const std::exception& e) {
      return {500, error_body(500, e.what())};
    }
  }

  Response create(const std::string& body) {
    return guarded([&] {
      const TrialMeta meta = meta_from_json(io::parse_json_text(body));
      auto entry = store_.create(meta);
      std::shared_lock lock(entry->mutex);
      return Response{201, detail::state_json(entry->state)};
    });
  }

  Response list() const {
    return guarded([&] {
      json ids = json::array();
      for (const auto& id : store_.ids()) ids.push_back(id);
      return Response{200, {{"schema_version", io::kSchemaVersion}, {"trials", ids}}};
    });
  }

  Response get(const std::string& id) const {
    return guarded([&] {
      auto entry = store_.find(id);
      std::shared_lock lock(entry->mutex);
      return Response{200, detail::state_json(entry->state)};
    });
  }

  Response append_rows(const std::string& id, int stage, const std::string& body) {
    return guarded([&] {
      auto entry = store_.find(id);
      const json doc = io::parse_json_text(body);
      const json& arr = doc.is_array() ? doc : io::require(doc, "rows", "");
      if (!arr.is_array() || arr.empty()) throw ValidationError("rows", "expected a non-empty array of rows");

      std::unique_lock lock(entry->mutex);
      TrialState& st = entry->state;
      check_open(st, stage);
      std::vector<TrialRow> rows;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        rows.push_back(io::row_from_json(arr[i], stage, st.meta.components(), st.meta.covariates,
                                         "rows[" + std::to_string(i) + "]"));
      }
      TrialDataset combined = st.dataset_through();
      const std::size_t offset = combined.size();
      for (const auto& r : rows) combined.add(r);
      try {
        combined.validate();
      } catch (const InvariantError& e) {
        const std::string msg = std::string(e.what()).substr(e.path().size() + 2);
        if (e.row() != InvariantError::npos && e.row() >= offset) {
          throw ValidationError("rows[" + std::to_string(e.row() - offset) + "]." + e.field(), msg);
        }
        throw ValidationError("rows", msg);
      }
      store_.append_rows(*entry, stage, std::move(rows));
      json out = detail::snapshot_json(st.stages[static_cast<std::size_t>(stage - 1)]);
      out["schema_version"] = io::kSchemaVersion;
      return Response{200, out};
    });
  }

  /// Freezes stage k and records the fit on stages 1..k with the package
  /// it recommends for stage k + 1. A fit the data cannot support (a single
  /// stage-1 package is common) is recorded as an error, not a refusal.
  Response lock(const std::string& id, int stage) {
    return guarded([&] {
      auto entry = store_.find(id);
      std::unique_lock lock(entry->mutex);
      TrialState& st = entry->state;
      if (stage < 1) throw ValidationError("stage", "must be >= 1");
      if (stage <= st.locked_stages()) throw ConflictError("stage " + std::to_string(stage) + " is already locked");
      if (stage > st.open_stage()) {
        throw ConflictError("stages lock in order: stage " + std::to_string(st.open_stage()) + " must be locked first");
      }
      if (static_cast<int>(st.stages.size()) < stage || st.stages[static_cast<std::size_t>(stage - 1)].rows.empty()) {
        throw ConflictError("stage " + std::to_string(stage) + " has no rows");
      }
      json fit, rec;
      try {
        const FitResult f = detail::fit_state(st, stage);
        fit = io::fit_report(f, st.dataset_through(stage));
        fit.erase("schema_version");
        rec = detail::recommendation_json(f, detail::what_if({}, st.meta), st.meta.grid_increment);
        rec["for_stage"] = stage + 1;
      } catch (const Error& e) {
        fit = {{"error", e.what()}};
        rec = nullptr;
      }
      store_.lock_stage(*entry, stage, fit, rec);
      json out = detail::snapshot_json(st.stages[static_cast<std::size_t>(stage - 1)]);
      out["schema_version"] = io::kSchemaVersion;
      return Response{200, out};
    });
  }

  Response fit(const std::string& id, const Params& p) const {
    return guarded([&] {
      auto entry = store_.find(id);
      std::shared_lock lock(entry->mutex);
      const TrialState& st = entry->state;
      const int through = detail::through_param(p, st);
      const FitResult f = detail::fit_state(st, through);
      json out = io::fit_report(f, st.dataset_through(through));
      out["through_stage"] = through == 0 ? static_cast<int>(st.stages.size()) : through;
      return Response{200, out};
    });
  }

  /// What-if recommendation; reads state only.
  Response recommend(const std::string& id, const Params& p) const {
    return guarded([&] {
      auto entry = store_.find(id);
      std::shared_lock lock(entry->mutex);
      const TrialState& st = entry->state;
      const int through = detail::through_param(p, st);
      const detail::WhatIf w = detail::what_if(p, st.meta);
      const double inc = detail::number_param(p, "increment", st.meta.grid_increment);
      if (!(inc > 0.0)) throw ValidationError("increment", "must be > 0");
      const FitResult f = detail::fit_state(st, through);
      json out = detail::recommendation_json(f, w, inc);
      out["schema_version"] = io::kSchemaVersion;
      out["through_stage"] = through == 0 ? static_cast<int>(st.stages.size()) : through;
      return Response{200, out};
    });
  }

  Response confset(const std::string& id, const Params& p) const {
    return grid_query(id, p, true);
  }

  Response bands(const std::string& id, const Params& p) const { return grid_query(id, p, false); }

  static constexpr double kMaxGridCells = 1e6;

 private:
  static void check_open(const TrialState& st, int stage) {
    if (stage < 1) throw ValidationError("stage", "must be >= 1");
    if (stage <= st.locked_stages()) {
      throw ConflictError("stage " + std::to_string(stage) + " is locked; its rows are immutable");
    }
    if (stage > st.open_stage()) {
      throw ConflictError("stage " + std::to_string(stage) + " is not open; the open stage is " +
                          std::to_string(st.open_stage()));
    }
  }

  Response grid_query(const std::string& id, const Params& p, bool set) const {
    return guarded([&] {
      auto entry = store_.find(id);
      std::shared_lock lock(entry->mutex);
      const TrialState& st = entry->state;
      const int through = detail::through_param(p, st);
      const detail::WhatIf w = detail::what_if(p, st.meta);
      const double inc = detail::number_param(p, "increment", 0.1);
      const double level = detail::number_param(p, "level", 0.95);
      if (!(inc > 0.0)) throw ValidationError("increment", "must be > 0");
      if (!(level > 0.0 && level < 1.0)) throw ValidationError("level", "must be in (0, 1)");
      if (grid_cell_count(w.bounds, inc) > kMaxGridCells) {
        throw ValidationError("increment", "grid too fine for an interactive query");
      }
      const FitResult f = detail::fit_state(st, through);
      json out = {{"schema_version", io::kSchemaVersion}};
      if (set) {
        out["confidence_set"] = io::to_json(confidence_set(f, w.bounds, w.z, TargetSpec{w.theta}, inc, level));
        out["theta"] = w.theta;
      } else {
        out["bands"] = io::to_json(confidence_bands(f, w.bounds, w.z, inc, level));
      }
      out["through_stage"] = through == 0 ? static_cast<int>(st.stages.size()) : through;
      return Response{200, out};
    });
  }

  TrialStore& store_;
};

}  // namespace lago::service
