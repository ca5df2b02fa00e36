#include "tmeseg/counting.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace tmeseg {

BitMask class_mask(const LabelRaster& mask, ClassId c) {
  BitMask m(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask[i] == c ? 1 : 0;
  return m;
}

std::uint64_t pixel_area(const LabelRaster& mask, ClassId c) {
  std::uint64_t n = 0;
  for (ClassId v : mask.pixels()) n += v == c ? 1 : 0;
  return n;
}

std::uint64_t count_by_components(const LabelRaster& mask, ClassId c, Connectivity conn) {
  return connected_components(class_mask(mask, c), conn).count();
}

double estimate_count_by_area(const LabelRaster& mask, ClassId c, double mean_area) {
  if (!(mean_area > 0.0) || !std::isfinite(mean_area)) throw usage_error("mean area per cell must be positive");
  return static_cast<double>(pixel_area(mask, c)) / mean_area;
}

CountRecord count_record(const LabelRaster& mask, ClassId c, std::optional<double> mean_area, Connectivity conn) {
  return {c, pixel_area(mask, c), count_by_components(mask, c, conn), mean_area};
}

Calibration calibrate(std::span<const AreaCountPair> pairs) {
  if (pairs.size() < 2) throw data_error("calibrate: need at least two area/count pairs");
  double saa = 0.0, sac = 0.0, scc = 0.0;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.pixel_area) || !std::isfinite(p.reference_count) || p.pixel_area < 0.0 ||
        p.reference_count < 0.0) {
      throw data_error("calibrate: areas and counts must be finite and non-negative");
    }
    saa += p.pixel_area * p.pixel_area;
    sac += p.pixel_area * p.reference_count;
    scc += p.reference_count * p.reference_count;
  }
  if (saa == 0.0) throw data_error("calibrate: all areas are zero");
  if (sac == 0.0) throw data_error("calibrate: no cells in any pair with non-zero area");
  const double beta = sac / saa;  // cells per pixel
  double ss_res = 0.0;
  for (const auto& p : pairs) {
    const double r = p.reference_count - beta * p.pixel_area;
    ss_res += r * r;
  }
  Calibration out;
  out.mean_area_per_cell = 1.0 / beta;
  out.r_squared = 1.0 - ss_res / scc;
  out.n = pairs.size();
  return out;
}

nlohmann::json to_json(const CalibrationTable& t, const Taxonomy& tax) {
  nlohmann::json doc{{"schema_version", 1}, {"datasets", nlohmann::json::object()}};
  for (const auto& [dataset, per_class] : t) {
    auto& d = doc["datasets"][dataset];
    d = nlohmann::json::object();
    for (const auto& [c, cal] : per_class) {
      d[tax.name_of(c)] = {{"mean_area_per_cell", cal.mean_area_per_cell},
                           {"r_squared", cal.r_squared},
                           {"n", cal.n}};
    }
  }
  return doc;
}

CalibrationTable calibration_table_from_json(const nlohmann::json& doc, const Taxonomy& tax) {
  CalibrationTable t;
  try {
    for (const auto& [dataset, per_class] : doc.at("datasets").items()) {
      auto& row = t[dataset];
      for (const auto& [name, cal] : per_class.items()) {
        Calibration c;
        c.mean_area_per_cell = cal.at("mean_area_per_cell").get<double>();
        c.r_squared = cal.value("r_squared", 0.0);
        c.n = cal.value("n", std::size_t{0});
        if (!(c.mean_area_per_cell > 0.0)) throw data_error("calibration: mean area must be positive");
        row[tax.resolve(name)] = c;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("calibration table: ") + e.what());
  }
  return t;
}

}  // namespace tmeseg
