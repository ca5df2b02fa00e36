#include "tmeseg/config.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "tmeseg/io.hpp"

#ifndef TMESEG_VERSION
#define TMESEG_VERSION "0.0.0"
#endif

namespace tmeseg {

const char* version() { return TMESEG_VERSION; }

namespace {

std::string dark_name(DarkStatistic d) {
  switch (d) {
    case DarkStatistic::median: return "median";
    case DarkStatistic::mean: return "mean";
    case DarkStatistic::fraction: return "fraction";
  }
  return "?";
}

DarkStatistic parse_dark(const std::string& s) {
  if (s == "median") return DarkStatistic::median;
  if (s == "mean") return DarkStatistic::mean;
  if (s == "fraction") return DarkStatistic::fraction;
  throw usage_error("config: dark_statistic must be median, mean or fraction (got '" + s + "')");
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw usage_error("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw usage_error("config: unknown key '" + where + k + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw usage_error(std::string("config: bad value for '") + key + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  const auto& a = aggregator;
  auto bad = [](const std::string& msg) { throw usage_error("config: " + msg); };
  if (!(a.sigma > 0.0 && a.sigma <= 100.0)) bad(fmt::format("sigma must be in (0, 100] (got {})", a.sigma));
  if (a.roi_radius < 1 || a.roi_radius > 1024) bad(fmt::format("roi_radius must be in [1, 1024] (got {})", a.roi_radius));
  if (a.dark_sum_threshold < 0 || a.dark_sum_threshold > 765) {
    bad(fmt::format("dark_sum_threshold must be in [0, 765] (got {})", a.dark_sum_threshold));
  }
  if (!(a.dark_fraction > 0.0 && a.dark_fraction <= 1.0)) bad("dark_fraction must be in (0, 1]");
  if (a.min_contour_area < 1) bad("min_contour_area must be at least 1");
  if (!std::isfinite(a.candidate_score_threshold)) bad("candidate_score_threshold must be finite");
  if (!(a.epithelial_overlap >= 0.0 && a.epithelial_overlap < 1.0)) bad("epithelial_overlap must be in [0, 1)");
  if (!(a.stroma_overlap >= 0.0 && a.stroma_overlap < 1.0)) bad("stroma_overlap must be in [0, 1)");
  if (a.workers < 0) bad("workers must be non-negative");
  if (!(margin_um > 0.0) || !std::isfinite(margin_um)) bad("margin_um must be positive");
  if (tie_rule != "ascending_class_id") bad("tie_rule must be 'ascending_class_id'");
  tiles.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"sigma", "connectivity", "roi_radius", "dark_sum_threshold", "dark_statistic", "dark_fraction",
              "min_contour_area", "candidate_score_threshold", "epithelial_overlap", "stroma_overlap",
              "background_threshold", "margin_um", "tie_rule", "workers", "tiling", "downscale_2x", "paths"},
             "");
  RunConfig c;
  auto& a = c.aggregator;
  read(j, "sigma", a.sigma);
  read(j, "roi_radius", a.roi_radius);
  read(j, "dark_sum_threshold", a.dark_sum_threshold);
  if (j.contains("dark_statistic")) {
    std::string s;
    read(j, "dark_statistic", s);
    a.dark_statistic = parse_dark(s);
  }
  read(j, "dark_fraction", a.dark_fraction);
  read(j, "min_contour_area", a.min_contour_area);
  read(j, "candidate_score_threshold", a.candidate_score_threshold);
  read(j, "epithelial_overlap", a.epithelial_overlap);
  read(j, "stroma_overlap", a.stroma_overlap);
  read(j, "workers", a.workers);
  if (j.contains("background_threshold") && !j["background_threshold"].is_null()) {
    int t = -1;
    read(j, "background_threshold", t);
    if (t < 0 || t > 255) throw usage_error("config: background_threshold must be in [0, 255]");
    a.background_threshold = static_cast<std::uint8_t>(t);
  }
  if (j.contains("connectivity")) {
    int conn = 0;
    read(j, "connectivity", conn);
    if (conn != 4 && conn != 8) throw usage_error("config: connectivity must be 4 or 8");
    c.connectivity = static_cast<Connectivity>(conn);
  }
  read(j, "margin_um", c.margin_um);
  read(j, "tie_rule", c.tie_rule);
  read(j, "downscale_2x", c.downscale_2x);
  read(j, "paths", c.paths);
  if (j.contains("tiling")) {
    const auto& t = j["tiling"];
    check_keys(t, {"enabled", "crop", "stride", "halo", "threshold_scope"}, "tiling.");
    read(t, "enabled", c.tiled);
    read(t, "crop", c.tiles.crop);
    read(t, "stride", c.tiles.stride);
    read(t, "halo", c.tiles.halo);
    if (t.contains("threshold_scope")) {
      std::string s;
      read(t, "threshold_scope", s);
      if (s == "per_tile") {
        c.threshold_scope = ThresholdScope::per_tile;
      } else if (s == "global") {
        c.threshold_scope = ThresholdScope::global;
      } else {
        throw usage_error("config: tiling.threshold_scope must be per_tile or global");
      }
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(path + ": not valid JSON: " + e.what());
  } catch (const Error& e) {
    throw usage_error(e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& a = c.aggregator;
  return {
      {"sigma", a.sigma},
      {"connectivity", static_cast<int>(c.connectivity)},
      {"roi_radius", a.roi_radius},
      {"dark_sum_threshold", a.dark_sum_threshold},
      {"dark_statistic", dark_name(a.dark_statistic)},
      {"dark_fraction", a.dark_fraction},
      {"min_contour_area", a.min_contour_area},
      {"candidate_score_threshold", a.candidate_score_threshold},
      {"epithelial_overlap", a.epithelial_overlap},
      {"stroma_overlap", a.stroma_overlap},
      {"background_threshold",
       a.background_threshold ? nlohmann::json(static_cast<int>(*a.background_threshold)) : nlohmann::json()},
      {"margin_um", c.margin_um},
      {"tie_rule", c.tie_rule},
      {"workers", a.workers},
      {"tiling",
       {{"enabled", c.tiled},
        {"crop", c.tiles.crop},
        {"stride", c.tiles.stride},
        {"halo", c.tiles.halo},
        {"threshold_scope", c.threshold_scope == ThresholdScope::global ? "global" : "per_tile"}}},
      {"downscale_2x", c.downscale_2x},
      {"paths", c.paths},
  };
}

std::string config_hash(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

nlohmann::json provenance(const std::string& command, const RunConfig& c, const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs) {
  auto ins = nlohmann::json::array();
  std::string combined = config_hash(c);
  for (const auto& p : inputs) {
    const std::string h = sha256_file(p);
    combined += '\n' + h;
    ins.push_back({{"path", p}, {"sha256", h}});
  }
  return {{"schema_version", 1},
          {"tool", "tmeseg"},
          {"version", version()},
          {"command", command},
          {"config", to_json(c)},
          {"config_sha256", config_hash(c)},
          {"inputs", std::move(ins)},
          {"run_sha256", sha256_hex(combined)},
          {"outputs", outputs}};
}

}  // namespace tmeseg
