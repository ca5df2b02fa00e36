#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tmeseg/raster.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

/// A reported cell population: one class or a union such as all leukocytes
/// (counts are summed per class, so touching cells of different types stay
/// separate).
struct CellGroup {
  std::string name;
  std::vector<ClassId> classes;
};

/// fibroblast, endothelial, lymphocyte, plasma, myeloid, neutrophil,
/// eosinophil and all leukocytes.
const std::vector<CellGroup>& default_cell_groups();

struct GroupMetrics {
  std::string name;
  std::uint64_t count = 0;       // components over the whole slide
  std::uint64_t band_count = 0;  // components whose centroid lies in the band
  std::optional<double> in_tumor_ratio;
  std::optional<double> band_density_mm2;
  std::optional<double> peripheral_ratio;
};

struct SlideMetrics {
  double mpp = 0.0;
  double margin_um = 50.0;
  std::uint64_t tumor_cell_count = 0;
  std::uint64_t tumor_region_px = 0;
  std::uint64_t band_area_px = 0;
  double band_area_mm2 = 0.0;
  std::vector<GroupMetrics> groups;
};

/// Tumour region = epithelial tissue plus epithelial cell nuclei; tumour
/// cells = epithelial nucleus components. Density is per mm^2 of the band
/// outside the tumour within margin_um.
SlideMetrics slide_metrics(const LabelRaster& mask, double mpp, double margin_um = 50.0,
                           const std::vector<CellGroup>& groups = default_cell_groups(), int workers = 1);

nlohmann::json to_json(const SlideMetrics& m);

struct MannWhitneyResult {
  double u = 0.0;  // for the first sample
  double p_value = 1.0;
  bool exact = false;
};

/// Two-sided Mann-Whitney U with midranks. Exact null distribution when the
/// smaller sample has at most `exact_max` values, otherwise the normal
/// approximation with tie and continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, std::size_t exact_max = 8);

struct CaseRecord {
  std::string case_id;
  /// Flattened metric name ("in_tumor.lymphocyte", "peripheral.endothelial", ...)
  /// to value; nullopt when not applicable.
  std::map<std::string, std::optional<double>> metrics;
  std::map<std::string, bool> mutated;
};

std::map<std::string, std::optional<double>> flatten(const SlideMetrics& m);

/// Arithmetic mean of each metric over the slides where it is defined.
CaseRecord make_case(std::string case_id, std::span<const SlideMetrics> slides, std::map<std::string, bool> mutated);

enum class AssociationStatus { ok, insufficient_n };

struct AssociationCell {
  std::string metric;
  std::string gene;
  std::size_t n_mutated = 0;
  std::size_t n_wildtype = 0;
  AssociationStatus status = AssociationStatus::ok;
  std::optional<MannWhitneyResult> test;
  std::string direction;  // "enriched", "depleted", "none" or empty
};

/// Nominal (uncorrected) Mann-Whitney p-value for every metric x gene.
/// Metrics default to the union over all cases, sorted.
std::vector<AssociationCell> association_table(std::span<const CaseRecord> cases, std::span<const std::string> genes,
                                               std::vector<std::string> metrics = {}, std::size_t min_group = 2);

nlohmann::json to_json(const std::vector<AssociationCell>& t);
std::string to_csv(const std::vector<AssociationCell>& t);

}  // namespace tmeseg
