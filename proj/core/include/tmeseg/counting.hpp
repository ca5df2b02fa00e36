#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "tmeseg/raster.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

struct CountRecord {
  ClassId cls;
  std::uint64_t pixel_area = 0;
  std::uint64_t component_count = 0;
  std::optional<double> mean_area_per_cell;
};

BitMask class_mask(const LabelRaster& mask, ClassId c);
std::uint64_t pixel_area(const LabelRaster& mask, ClassId c);

/// 8-connected components of the class mask. Touching cells merge.
std::uint64_t count_by_components(const LabelRaster& mask, ClassId c, Connectivity conn = Connectivity::eight);

/// pixel_area / mean_area.
double estimate_count_by_area(const LabelRaster& mask, ClassId c, double mean_area);

CountRecord count_record(const LabelRaster& mask, ClassId c, std::optional<double> mean_area = std::nullopt,
                         Connectivity conn = Connectivity::eight);

struct AreaCountPair {
  double pixel_area = 0.0;
  double reference_count = 0.0;
};

struct Calibration {
  double mean_area_per_cell = 0.0;  // slope of area against count
  double r_squared = 0.0;           // uncentred, through the origin
  std::size_t n = 0;
};

/// Least squares count = area / slope through the origin.
Calibration calibrate(std::span<const AreaCountPair> pairs);

/// dataset id -> class -> calibration.
using CalibrationTable = std::map<std::string, std::map<ClassId, Calibration>>;

nlohmann::json to_json(const CalibrationTable& t, const Taxonomy& tax = Taxonomy::builtin());
CalibrationTable calibration_table_from_json(const nlohmann::json& doc, const Taxonomy& tax = Taxonomy::builtin());

}  // namespace tmeseg
