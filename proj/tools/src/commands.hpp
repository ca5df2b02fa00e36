#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmeseg/config.hpp"

namespace tmeseg::cli {

struct Common {
  std::string config_path;
  int workers = 0;  // 0 = config, then TMESEG_WORKERS, then 1
  std::string provenance_path;
};

struct AggregateArgs {
  std::string bundle;
  std::string out;
  std::string report;
  bool tiled = false;
  bool global_threshold = false;
  bool downscale = false;
};

struct PostprocessArgs {
  std::string logits;
  std::string nuclei;
  std::string mode = "force";
  std::string out;
};

struct EvaluateArgs {
  std::string gt;
  std::string pred;
  std::string map;
  std::string out;
  std::vector<std::string> semantic_classes;
};

struct CountArgs {
  std::string mask;
  std::vector<std::string> classes;
  std::vector<std::string> mean_areas;  // "class=px"
  std::string calibration;
  std::string dataset;
  std::string fit;
  std::string out;
};

struct TmeSlideArgs {
  std::string mask;
  std::optional<double> mpp;
  std::optional<double> margin_um;
  std::string out;
};

struct TmeAssocArgs {
  std::string manifest;
  std::vector<std::string> genes;
  std::size_t min_group = 2;
  std::string out;
  std::string csv;
};

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string truth;
  std::string student;
  std::string size;  // WxH, random scene when empty
  std::optional<double> mpp;
};

struct InfoArgs {
  std::vector<std::string> files;
};

RunConfig load_config(const Common& c);

int run_aggregate(const Common& c, const AggregateArgs& a);
int run_postprocess(const Common& c, const PostprocessArgs& a);
int run_evaluate(const Common& c, const EvaluateArgs& a);
int run_count(const Common& c, const CountArgs& a);
int run_tme_slide(const Common& c, const TmeSlideArgs& a);
int run_tme_assoc(const Common& c, const TmeAssocArgs& a);
int run_synth(const Common& c, const SynthArgs& a);
int run_info(const Common& c, const InfoArgs& a);

}  // namespace tmeseg::cli
