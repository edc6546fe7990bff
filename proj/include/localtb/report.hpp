#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "localtb/config.hpp"
#include "localtb/error.hpp"

namespace localtb {

/// How a measured constant is judged.
///   stability: const(N+1)/const(N) within 1 ± band
///   at_most / at_least: both depths against the tolerance
///   info: recorded only
enum class Check { stability, at_most, at_least, info };

inline std::string to_string(Check c) {
  switch (c) {
    case Check::stability: return "stability";
    case Check::at_most: return "at_most";
    case Check::at_least: return "at_least";
    case Check::info: return "info";
  }
  return "info";
}

inline Check check_from_string(const std::string& s) {
  if (s == "stability") return Check::stability;
  if (s == "at_most") return Check::at_most;
  if (s == "at_least") return Check::at_least;
  if (s == "info") return Check::info;
  throw Error("unknown check kind: " + s);
}

/// One constant measured at a single depth.
struct Measurement {
  std::string stage;
  std::string name;
  std::string anchor;
  Check check = Check::info;
  double tolerance = 0.0;
  double value = 0.0;
};

struct Record {
  std::string stage;
  std::string name;
  std::string anchor;
  Check check = Check::info;
  /// The band for stability checks, the bound otherwise.
  double tolerance = 0.0;
  double at_n = 0.0;
  double at_n1 = 0.0;
  double ratio = 0.0;
  bool pass = true;
};

inline double stability_ratio(double a, double b) {
  if (a == b) return 1.0;
  if (a == 0.0) return std::numeric_limits<double>::infinity();
  return b / a;
}

inline Record combine(const Measurement& n, const Measurement& n1, double band) {
  if (n.stage != n1.stage || n.name != n1.name) throw Error("measurements at the two depths do not line up: " + n.name);
  Record r{n.stage, n.name, n.anchor, n.check, n.tolerance, n.value, n1.value, stability_ratio(n.value, n1.value), true};
  const bool finite = std::isfinite(n.value) && std::isfinite(n1.value);
  switch (n.check) {
    case Check::stability:
      r.tolerance = band;
      r.pass = finite && std::abs(r.ratio - 1.0) <= band;
      break;
    case Check::at_most: r.pass = finite && n.value <= n.tolerance && n1.value <= n.tolerance; break;
    case Check::at_least: r.pass = finite && n.value >= n.tolerance && n1.value >= n.tolerance; break;
    case Check::info: r.pass = true; break;
  }
  return r;
}

/// Which stage consumed and produced which artifacts.
struct StageProvenance {
  std::string stage;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  /// The Φ ≡ 0 shortcut was taken.
  bool shortcut = false;
};

/// One row of the per-part pairing table.
struct PartRow {
  std::string part;
  int k = 0;
  std::string m;
  double contribution = 0.0;
};

struct VerificationReport {
  RunConfig config;
  int depth_n = 0;
  int depth_n1 = 0;
  std::vector<Record> records;
  std::vector<StageProvenance> provenance;
  /// Side tables at depth N.
  std::vector<PartRow> parts;
  std::vector<double> phi;

  std::size_t failures() const {
    std::size_t k = 0;
    for (const auto& r : records) k += r.pass ? 0 : 1;
    return k;
  }
  bool pass() const { return failures() == 0; }

  const Record* find(const std::string& stage, const std::string& name) const {
    for (const auto& r : records)
      if (r.stage == stage && r.name == name) return &r;
    return nullptr;
  }
};

namespace detail {

// JSON has no inf or nan; both become null.
inline nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

/// Report schema "localtb.report/1".
inline nlohmann::json report_to_json(const VerificationReport& rep) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : rep.records)
    recs.push_back({{"stage", r.stage},
                    {"name", r.name},
                    {"anchor", r.anchor},
                    {"check", to_string(r.check)},
                    {"tolerance", detail::number(r.tolerance)},
                    {"at_n", detail::number(r.at_n)},
                    {"at_n1", detail::number(r.at_n1)},
                    {"ratio", detail::number(r.ratio)},
                    {"pass", r.pass}});
  nlohmann::json prov = nlohmann::json::array();
  for (const auto& p : rep.provenance)
    prov.push_back({{"stage", p.stage}, {"inputs", p.inputs}, {"outputs", p.outputs}, {"shortcut", p.shortcut}});
  return {{"schema", "localtb.report/1"},
          {"config", config_to_json(rep.config)},
          {"depths", {rep.depth_n, rep.depth_n1}},
          {"pass", rep.pass()},
          {"failures", rep.failures()},
          {"records", recs},
          {"provenance", prov}};
}

inline std::vector<Record> records_from_json(const nlohmann::json& j) {
  std::vector<Record> out;
  for (const auto& r : j.at("records")) {
    Record x;
    x.stage = r.at("stage").get<std::string>();
    x.name = r.at("name").get<std::string>();
    x.anchor = r.at("anchor").get<std::string>();
    x.check = check_from_string(r.at("check").get<std::string>());
    x.tolerance = detail::number_or_nan(r.at("tolerance"));
    x.at_n = detail::number_or_nan(r.at("at_n"));
    x.at_n1 = detail::number_or_nan(r.at("at_n1"));
    x.ratio = detail::number_or_nan(r.at("ratio"));
    x.pass = r.at("pass").get<bool>();
    out.push_back(std::move(x));
  }
  return out;
}

/// Summary schema "localtb.summary/1": per (stage, name), the worst constant
/// over all runs (the minimum for at_least checks), the stability ratio
/// farthest from 1, and whether every run passed.
inline nlohmann::json merge_reports(const std::vector<std::string>& paths) {
  if (paths.empty()) throw Error("no reports to merge");
  struct Worst {
    Record rec;
    std::size_t runs = 0;
    bool all_pass = true;
  };
  std::map<std::pair<std::string, std::string>, Worst> acc;
  std::vector<std::pair<std::string, std::string>> order;
  std::size_t failures = 0;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open report " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      if (j.value("schema", "") != "localtb.report/1") throw Error(path + " is not a localtb report");
      for (const auto& r : records_from_json(j)) {
        const auto key = std::make_pair(r.stage, r.name);
        auto it = acc.find(key);
        if (it == acc.end()) {
          order.push_back(key);
          acc[key] = Worst{r, 1, r.pass};
          continue;
        }
        auto& w = it->second;
        ++w.runs;
        w.all_pass = w.all_pass && r.pass;
        const double cur = std::max(r.at_n, r.at_n1), old = std::max(w.rec.at_n, w.rec.at_n1);
        const double cur_lo = std::min(r.at_n, r.at_n1), old_lo = std::min(w.rec.at_n, w.rec.at_n1);
        const bool worse = r.check == Check::at_least ? cur_lo < old_lo : cur > old;
        if (worse || std::isnan(cur)) {
          w.rec.at_n = r.at_n;
          w.rec.at_n1 = r.at_n1;
        }
        if (!(std::abs(r.ratio - 1.0) <= std::abs(w.rec.ratio - 1.0))) w.rec.ratio = r.ratio;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed report " + path + ": " + e.what());
    }
    failures += j.value("failures", std::size_t{0});
  }
  nlohmann::json worst = nlohmann::json::array();
  for (const auto& key : order) {
    const auto& w = acc.at(key);
    const bool lo = w.rec.check == Check::at_least;
    worst.push_back({{"stage", w.rec.stage},
                     {"name", w.rec.name},
                     {"anchor", w.rec.anchor},
                     {"check", to_string(w.rec.check)},
                     {"tolerance", detail::number(w.rec.tolerance)},
                     {"worst", detail::number(lo ? std::min(w.rec.at_n, w.rec.at_n1) : std::max(w.rec.at_n, w.rec.at_n1))},
                     {"worst_ratio", detail::number(w.rec.ratio)},
                     {"runs", w.runs},
                     {"pass", w.all_pass}});
  }
  return {{"schema", "localtb.summary/1"},
          {"reports", paths},
          {"failures", failures},
          {"pass", failures == 0},
          {"worst", worst}};
}

inline void write_parts_csv(const std::vector<PartRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "part,k,m,contribution\n";
  for (const auto& r : rows) out << r.part << ',' << r.k << ',' << r.m << ',' << r.contribution << '\n';
}

/// One value per finest cell, row-major.
inline void write_grid_csv(const std::vector<double>& values, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  for (double v : values) out << v << '\n';
}

}  // namespace localtb
