#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lago/dataset.hpp"
#include "lago/error.hpp"

// Trial data as CSV: header `stage,center_id,arm,y,a_1..a_P,z_1..z_Q`,
// '.' decimals, no missing values, no quoting.

namespace lago::io {

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t line, std::size_t column, std::string_view name) {
  s = trim(s);
  if (s.empty()) throw ParseError(line, column, "missing value for '" + std::string(name) + "'");
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(line, column, "'" + std::string(s) + "' is not a finite number (" + std::string(name) + ")");
  }
  return v;
}

inline int parse_int(std::string_view s, std::size_t line, std::size_t column, std::string_view name) {
  s = trim(s);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(line, column, "'" + std::string(s) + "' is not an integer (" + std::string(name) + ")");
  }
  return v;
}

// Counts a_1..a_P then z_1..z_Q after the fixed columns, insisting on order.
inline void parse_header(const std::vector<std::string_view>& cols, std::size_t& P, std::size_t& Q) {
  const char* fixed[] = {"stage", "center_id", "arm", "y"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= cols.size() || trim(cols[i]) != fixed[i]) {
      throw ParseError(1, i + 1, std::string("expected column '") + fixed[i] + "'");
    }
  }
  P = Q = 0;
  std::size_t i = 4;
  for (; i < cols.size() && trim(cols[i]) == "a_" + std::to_string(P + 1); ++i) ++P;
  for (; i < cols.size() && trim(cols[i]) == "z_" + std::to_string(Q + 1); ++i) ++Q;
  if (i != cols.size()) {
    throw ParseError(1, i + 1,
                     "unexpected column '" + std::string(trim(cols[i])) + "' (expected a_" + std::to_string(P + 1) +
                         (P > 0 ? " or z_" + std::to_string(Q + 1) : std::string()) + ")");
  }
}

}  // namespace detail

/// Parses and validates a trial CSV. Errors carry the 1-based line and
/// column of the first problem, including dataset invariant breaches.
inline TrialDataset read_trial_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, 1, "empty file: header row required");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::size_t P = 0, Q = 0;
  detail::parse_header(detail::split_fields(line), P, Q);
  const std::size_t width = 4 + P + Q;

  TrialDataset d(P, Q);
  std::vector<std::size_t> line_of_row;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != width) {
      throw ParseError(lineno, std::min(f.size(), width) + 1,
                       "expected " + std::to_string(width) + " fields, found " + std::to_string(f.size()));
    }
    TrialRow r;
    r.stage = detail::parse_int(f[0], lineno, 1, "stage");
    if (r.stage < 1) throw ParseError(lineno, 1, "stage must be >= 1");
    r.center_id = std::string(detail::trim(f[1]));
    if (r.center_id.empty()) throw ParseError(lineno, 2, "missing value for 'center_id'");
    try {
      r.arm = parse_arm(detail::trim(f[2]));
    } catch (const ValidationError& e) {
      throw ParseError(lineno, 3, e.what());
    }
    r.y = detail::parse_double(f[3], lineno, 4, "y");
    r.a.resize(static_cast<Eigen::Index>(P));
    r.z.resize(static_cast<Eigen::Index>(Q));
    for (std::size_t p = 0; p < P; ++p) {
      r.a[static_cast<Eigen::Index>(p)] = detail::parse_double(f[4 + p], lineno, 5 + p, "a_" + std::to_string(p + 1));
    }
    for (std::size_t q = 0; q < Q; ++q) {
      r.z[static_cast<Eigen::Index>(q)] =
          detail::parse_double(f[4 + P + q], lineno, 5 + P + q, "z_" + std::to_string(q + 1));
    }
    d.add(std::move(r));
    line_of_row.push_back(lineno);
  }
  try {
    d.validate();
  } catch (const InvariantError& e) {
    if (e.row() == InvariantError::npos) throw ParseError(lineno, 1, e.what());
    std::size_t column = 1;
    if (e.field() == "a") column = 5;
    if (e.field() == "z") column = 5 + P;
    if (e.field() == "arm") column = 3;
    throw ParseError(line_of_row[e.row()], column, e.what());
  }
  return d;
}

inline TrialDataset load_trial_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_trial_csv(in);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trial_csv(std::ostream& out, const TrialDataset& d) {
  out << "stage,center_id,arm,y";
  for (std::size_t p = 0; p < d.components(); ++p) out << ",a_" << p + 1;
  for (std::size_t q = 0; q < d.covariates(); ++q) out << ",z_" << q + 1;
  out << '\n';
  for (const auto& r : d.rows()) {
    out << r.stage << ',' << r.center_id << ',' << to_string(r.arm) << ',' << format_double(r.y);
    for (double v : r.a) out << ',' << format_double(v);
    for (double v : r.z) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace lago::io
