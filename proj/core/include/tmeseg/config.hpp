#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/tiling.hpp"

namespace tmeseg {

/// Library version string.
const char* version();

struct RunConfig {
  AggregatorConfig aggregator;
  Connectivity connectivity = Connectivity::eight;  // for cell counting
  double margin_um = 50.0;
  /// Only "ascending_class_id" is defined.
  std::string tie_rule = "ascending_class_id";
  TilePlan tiles;
  bool tiled = false;
  ThresholdScope threshold_scope = ThresholdScope::per_tile;
  bool downscale_2x = false;
  std::map<std::string, std::string> paths;

  /// Throws a usage error naming the first field outside its range.
  void validate() const;
};

/// Unknown keys are rejected so typos do not silently fall back to defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
/// Every field, defaults included.
nlohmann::json to_json(const RunConfig& c);

/// SHA-256 of the canonical (sorted-key, compact) JSON form.
std::string config_hash(const RunConfig& c);

/// {"schema_version", "tool", "version", "command", "config", "config_sha256",
///  "inputs": [{"path", "sha256"}], "run_sha256", "outputs": [paths]}.
/// run_sha256 covers the config hash and every input hash in order.
nlohmann::json provenance(const std::string& command, const RunConfig& c, const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs = {});

}  // namespace tmeseg
