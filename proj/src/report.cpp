#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <Eigen/Core>

#include "avl/errors.hpp"
#include "avl/harness.hpp"
#include "avl/json_util.hpp"

namespace avl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kReportVersion = 1;
constexpr int kManifestVersion = 1;

json error_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double error_from(const json& j) { return j.is_null() ? kFailureError : j.get<double>(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string markdown(const EvalReport& r) {
  std::ostringstream s;
  s << "# Localization recall [%]\n\n";
  s << "| distance [m] |";
  for (const Threshold& t : r.thresholds) s << ' ' << fmt("%g", t.dist_m) << " |";
  s << "\n|---|";
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) s << "---:|";
  s << "\n| orientation [deg] |";
  for (const Threshold& t : r.thresholds) s << ' ' << fmt("%g", t.angle_deg) << " |";
  s << '\n';
  for (const PolicyResult& p : r.rows) {
    s << "| " << p.policy << " |";
    for (double v : p.recall) s << ' ' << fmt("%.2f", v) << " |";
    s << '\n';
  }
  s << "\nWaypoints: " << r.waypoint_count << '\n';
  if (r.rows.empty()) return s.str();

  s << "\n## Cumulative fraction of waypoints by position error\n\n| error [m] |";
  for (const PolicyResult& p : r.rows) s << ' ' << p.policy << " |";
  s << "\n|---:|";
  for (std::size_t i = 0; i < r.rows.size(); ++i) s << "---:|";
  s << '\n';
  for (std::size_t g = 0; g < r.cdf_grid.size(); ++g) {
    s << "| " << fmt("%.4g", r.cdf_grid[g]) << " |";
    for (const PolicyResult& p : r.rows) s << ' ' << fmt("%.4f", p.cdf.at(g)) << " |";
    s << '\n';
  }
  return s.str();
}

// One tidy table: recall cells keyed by threshold, then CDF pairs keyed by
// error.
std::string csv(const EvalReport& r) {
  std::ostringstream s;
  s << "policy,metric,distance_m,angle_deg,value\n";
  for (const PolicyResult& p : r.rows) {
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      s << p.policy << ",recall," << fmt("%g", r.thresholds[t].dist_m) << ','
        << fmt("%g", r.thresholds[t].angle_deg) << ',' << fmt("%.4f", p.recall.at(t)) << '\n';
    }
  }
  for (const PolicyResult& p : r.rows) {
    for (std::size_t g = 0; g < r.cdf_grid.size(); ++g) {
      s << p.policy << ",cdf," << fmt("%.6g", r.cdf_grid[g]) << ",," << fmt("%.6f", p.cdf.at(g)) << '\n';
    }
  }
  return s.str();
}

}  // namespace

json report_to_json(const EvalReport& r) {
  json thresholds = json::array();
  for (const Threshold& t : r.thresholds) thresholds.push_back({{"dist_m", t.dist_m}, {"angle_deg", t.angle_deg}});
  json rows = json::array();
  for (const PolicyResult& p : r.rows) {
    json cdf = json::array();
    for (std::size_t g = 0; g < r.cdf_grid.size(); ++g) cdf.push_back({r.cdf_grid[g], p.cdf.at(g)});
    json sel = json::array();
    for (const Selection& s : p.selections) {
      sel.push_back({{"scene", s.scene},
                     {"waypoint", s.waypoint},
                     {"candidate", s.candidate},
                     {"success", s.success},
                     {"pos_error_m", error_json(s.pos_error_m)},
                     {"rot_error_deg", error_json(s.rot_error_deg)}});
    }
    rows.push_back({{"policy", p.policy}, {"recall_percent", p.recall}, {"cdf", cdf}, {"selections", sel}});
  }
  return {{"schema", "avl.report"},
          {"version", kReportVersion},
          {"waypoints", r.waypoint_count},
          {"thresholds", thresholds},
          {"cdf_grid_m", r.cdf_grid},
          {"policies", rows}};
}

EvalReport report_from_json(const json& j) {
  check_schema(j, "avl.report", kReportVersion);
  EvalReport r;
  try {
    r.waypoint_count = j.at("waypoints").get<int>();
    for (const json& t : j.at("thresholds")) {
      r.thresholds.push_back({t.at("dist_m").get<double>(), t.at("angle_deg").get<double>()});
    }
    r.cdf_grid = j.at("cdf_grid_m").get<std::vector<double>>();
    for (const json& p : j.at("policies")) {
      PolicyResult row;
      row.policy = p.at("policy").get<std::string>();
      row.recall = p.at("recall_percent").get<std::vector<double>>();
      for (const json& pair : p.at("cdf")) row.cdf.push_back(pair.at(1).get<double>());
      for (const json& s : p.at("selections")) {
        row.selections.push_back({s.at("scene").get<int>(), s.at("waypoint").get<int>(),
                                  s.at("candidate").get<int>(), s.at("success").get<bool>(),
                                  error_from(s.at("pos_error_m")), error_from(s.at("rot_error_deg"))});
      }
      if (row.recall.size() != r.thresholds.size() || row.cdf.size() != r.cdf_grid.size()) {
        throw SchemaError("report row " + row.policy + " has the wrong number of cells");
      }
      r.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("report: ") + e.what());
  }
  return r;
}

std::string render_report(const EvalReport& r, const std::string& format) {
  if (format == "markdown" || format == "md") return markdown(r);
  if (format == "csv") return csv(r);
  if (format == "json") return report_to_json(r).dump(2) + "\n";
  throw UsageError("unknown report format: " + format);
}

json component_versions() {
  return {{"avl", kToolVersion},
          {"dataset_shard", 1},
          {"dataset_schema", 1},
          {"report", kReportVersion},
          {"manifest", kManifestVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

void record_stage(const std::string& run_dir, const std::string& stage, const ExperimentConfig& c,
                  std::uint64_t seed, const json& outputs) {
  fs::create_directories(run_dir);
  const std::string path = (fs::path(run_dir) / "manifest.json").string();
  const std::string hash = config_hash(c);
  json m;
  if (fs::exists(path)) {
    m = read_json_file(path);
    check_schema(m, "avl.manifest", kManifestVersion);
    if (m.value("config_hash", "") != hash) {
      throw ConfigError("run directory " + run_dir + " was created with a different configuration");
    }
  } else {
    m = {{"schema", "avl.manifest"}, {"version", kManifestVersion}, {"config_hash", hash}, {"stages", json::object()}};
    write_json_file(to_json(c), (fs::path(run_dir) / "config.json").string());
  }
  m["versions"] = component_versions();
  m["stages"][stage] = {{"seed", seed}, {"outputs", outputs}};
  write_json_file(m, path);
}

}  // namespace avl
