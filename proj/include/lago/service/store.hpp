#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "lago/io/json.hpp"

// Persistent trial state. Each trial is one append-only JSON-lines file;
// the in-memory state is a replay of that log, so restarting the service
// reproduces every snapshot exactly.

namespace lago::service {

using io::json;

/// Thrown when a request conflicts with the trial's current state.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

struct TrialMeta {
  std::string id;
  std::string name;
  LinkFunction link;
  bool fit_intercept = true;
  std::size_t covariates = 0;
  ComponentBounds bounds;
  CostFunction cost = CostFunction::linear(Vector::Ones(1));
  double theta = 0.0;
  Vector z;  // covariates at which stage recommendations are made
  double grid_increment = 0.01;
  std::string created_at;

  std::size_t components() const { return bounds.size(); }
};

inline json to_json(const TrialMeta& m) {
  return {{"id", m.id},
          {"name", m.name},
          {"link", std::string(to_string(m.link.kind()))},
          {"fit_intercept", m.fit_intercept},
          {"components", m.components()},
          {"covariates", m.covariates},
          {"bounds", io::to_json(m.bounds)},
          {"cost", io::to_json(m.cost)},
          {"theta", m.theta},
          {"z", io::to_json(m.z)},
          {"grid_increment", m.grid_increment},
          {"created_at", m.created_at}};
}

inline bool valid_trial_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

/// Parses a creation request (or a replayed create event).
inline TrialMeta meta_from_json(const json& v) {
  using namespace io;
  TrialMeta m;
  if (const json* id = optional_field(v, "id")) {
    m.id = as_string(*id, "id");
    if (!valid_trial_id(m.id)) throw ValidationError("id", "use 1-64 characters from [A-Za-z0-9_-]");
  }
  if (const json* name = optional_field(v, "name")) m.name = as_string(*name, "name");
  m.link = link_from_json(require(v, "link", ""), "link");
  m.fit_intercept = bool_or(v, "fit_intercept", true, "");
  const long long q = integer_or(v, "covariates", 0, "");
  if (q < 0) throw ValidationError("covariates", "must be >= 0");
  m.covariates = static_cast<std::size_t>(q);
  m.bounds = bounds_from_json(require(v, "bounds", ""), "bounds");
  m.cost = cost_from_json(require(v, "cost", ""), "cost");
  if (m.cost.components() != m.bounds.size()) {
    throw ValidationError("cost", "expected " + std::to_string(m.bounds.size()) + " components to match bounds");
  }
  m.theta = as_number(require(v, "theta", ""), "theta");
  at_path("theta", [&] {
    TargetSpec{m.theta}.validate(m.link);
    return 0;
  });
  m.z = Vector::Zero(static_cast<Eigen::Index>(m.covariates));
  if (const json* z = optional_field(v, "z")) m.z = as_vector(*z, "z", static_cast<long>(m.covariates));
  m.grid_increment = number_or(v, "grid_increment", 0.01, "");
  if (!(m.grid_increment > 0.0)) throw ValidationError("grid_increment", "must be > 0");
  if (const json* at = optional_field(v, "created_at")) m.created_at = as_string(*at, "created_at");
  return m;
}

struct StageSnapshot {
  int stage = 0;
  std::vector<TrialRow> rows;
  bool locked = false;
  std::string locked_at;
  json fit;             // fit on stages 1..stage, recorded at lock
  json recommendation;  // package for stage + 1, recorded at lock
};

struct TrialState {
  TrialMeta meta;
  std::vector<StageSnapshot> stages;  // stages[k-1] is stage k

  int locked_stages() const {
    int n = 0;
    for (const auto& s : stages) n += s.locked ? 1 : 0;
    return n;
  }
  int open_stage() const { return locked_stages() + 1; }

  std::size_t row_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.rows.size();
    return n;
  }

  /// Rows of stages 1..k (all stages when k <= 0).
  TrialDataset dataset_through(int k = 0) const {
    TrialDataset d(meta.components(), meta.covariates);
    for (const auto& s : stages) {
      if (k > 0 && s.stage > k) break;
      for (const auto& r : s.rows) d.add(r);
    }
    return d;
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Trials keyed by id. Writes to one trial are serialized by that trial's
/// lock; reads take it shared. With an empty directory the store is
/// memory-only.
class TrialStore {
 public:
  struct Entry {
    mutable std::shared_mutex mutex;
    TrialState state;
  };

  explicit TrialStore(std::string directory = "") : dir_(std::move(directory)) {
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_);
    std::vector<std::filesystem::path> files;
    for (const auto& f : std::filesystem::directory_iterator(dir_)) {
      if (f.is_regular_file() && f.path().extension() == ".jsonl") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) replay(f);
  }

  const std::string& directory() const noexcept { return dir_; }

  std::string log_path(const std::string& id) const {
    return dir_.empty() ? std::string() : (std::filesystem::path(dir_) / (id + ".jsonl")).string();
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(map_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : trials_) out.push_back(id);
    return out;
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard lock(map_mutex_);
    auto it = trials_.find(id);
    if (it == trials_.end()) throw NotFoundError("unknown trial '" + id + "'");
    return it->second;
  }

  /// Registers a new trial and writes its create event.
  std::shared_ptr<Entry> create(TrialMeta meta) {
    std::lock_guard lock(map_mutex_);
    if (meta.id.empty()) meta.id = next_id();
    if (trials_.count(meta.id)) throw ConflictError("trial '" + meta.id + "' already exists");
    if (meta.created_at.empty()) meta.created_at = utc_timestamp();
    auto entry = std::make_shared<Entry>();
    entry->state.meta = meta;
    append(meta.id, {{"event", "create"}, {"schema_version", io::kSchemaVersion}, {"trial", to_json(meta)}});
    trials_[meta.id] = entry;
    return entry;
  }

  /// Call with the entry's unique lock held.
  void append_rows(Entry& e, int stage, std::vector<TrialRow> rows) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(io::to_json(r));
    append(e.state.meta.id, {{"event", "rows"}, {"stage", stage}, {"rows", arr}, {"timestamp", utc_timestamp()}});
    apply_rows(e.state, stage, std::move(rows));
  }

  /// Call with the entry's unique lock held.
  void lock_stage(Entry& e, int stage, json fit, json recommendation) {
    const std::string at = utc_timestamp();
    append(e.state.meta.id, {{"event", "lock"}, {"stage", stage}, {"fit", fit}, {"recommendation", recommendation},
                             {"timestamp", at}});
    apply_lock(e.state, stage, std::move(fit), std::move(recommendation), at);
  }

 private:
  std::string next_id() {
    for (;;) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "trial-%04zu", ++counter_);
      if (!trials_.count(buf)) return buf;
    }
  }

  void append(const std::string& id, const json& event) {
    if (dir_.empty()) return;
    std::ofstream out(log_path(id), std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot write trial log '" + log_path(id) + "'");
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw Error("failed writing trial log '" + log_path(id) + "'");
  }

  static void apply_rows(TrialState& s, int stage, std::vector<TrialRow> rows) {
    while (static_cast<int>(s.stages.size()) < stage) {
      StageSnapshot snap;
      snap.stage = static_cast<int>(s.stages.size()) + 1;
      s.stages.push_back(std::move(snap));
    }
    auto& dst = s.stages[static_cast<std::size_t>(stage - 1)].rows;
    for (auto& r : rows) dst.push_back(std::move(r));
  }

  static void apply_lock(TrialState& s, int stage, json fit, json rec, std::string at) {
    auto& snap = s.stages.at(static_cast<std::size_t>(stage - 1));
    snap.locked = true;
    snap.locked_at = std::move(at);
    snap.fit = std::move(fit);
    snap.recommendation = std::move(rec);
  }

  void replay(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::string line;
    std::size_t lineno = 0;
    std::shared_ptr<Entry> entry;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const json ev = json::parse(line);
        const std::string kind = ev.at("event").get<std::string>();
        if (kind == "create") {
          entry = std::make_shared<Entry>();
          entry->state.meta = meta_from_json(ev.at("trial"));
        } else if (!entry) {
          throw Error("event before create");
        } else if (kind == "rows") {
          const int stage = ev.at("stage").get<int>();
          std::vector<TrialRow> rows;
          const auto& arr = ev.at("rows");
          for (std::size_t i = 0; i < arr.size(); ++i) {
            rows.push_back(io::row_from_json(arr[i], stage, entry->state.meta.components(),
                                             entry->state.meta.covariates, "rows[" + std::to_string(i) + "]"));
          }
          apply_rows(entry->state, stage, std::move(rows));
        } else if (kind == "lock") {
          apply_lock(entry->state, ev.at("stage").get<int>(), ev.at("fit"), ev.at("recommendation"),
                     ev.at("timestamp").get<std::string>());
        } else {
          throw Error("unknown event '" + kind + "'");
        }
      } catch (const std::exception& e) {
        throw Error(file.string() + ":" + std::to_string(lineno) + ": corrupt trial log: " + e.what());
      }
    }
    if (entry) trials_[entry->state.meta.id] = entry;
  }

  std::string dir_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> trials_;
  std::size_t counter_ = 0;
};

}  // namespace lago::service
