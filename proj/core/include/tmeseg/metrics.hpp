#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tmeseg/raster.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// 2|X∩Y| / (|X|+|Y|); 1 when both masks are empty.
double dice(const BitMask& x, const BitMask& y);
/// |X∩Y| / |X∪Y|; 1 when both masks are empty.
double iou(const BitMask& x, const BitMask& y);
/// Matthews correlation; 0 when any marginal is zero.
double mcc(const ConfusionCounts& c);

/// One ground-truth nucleus after class mapping. `pred` is the mapped
/// predicted class covering most of its pixels; nullopt when only unmapped
/// pixels cover it.
struct EvalUnit {
  std::uint32_t gt_id = 0;
  ClassId gt;
  std::optional<ClassId> pred;
};

struct ClassScore {
  ClassId cls;
  ConfusionCounts counts;
  std::uint64_t gt_units = 0;
  std::optional<double> mcc;  // nullopt = no ground-truth units
};

/// Accumulates per-nucleus evaluation units over any number of images and
/// scores them with pooled one-vs-rest confusion counts.
class InstanceEvaluator {
 public:
  InstanceEvaluator(const ClassMap& map, const Taxonomy& tax = Taxonomy::builtin());

  /// `gt_classes` gives the (unmapped) taxonomy class of each GT instance.
  void add(const InstanceMap& gt, const std::map<std::uint32_t, ClassId>& gt_classes, const LabelRaster& pred);
  void merge(const InstanceEvaluator& other);

  const std::vector<EvalUnit>& units() const { return units_; }
  /// One row per evaluation class of the map, ascending id.
  std::vector<ClassScore> scores() const;

 private:
  ClassMap map_;
  const Taxonomy* tax_;
  std::vector<EvalUnit> units_;
};

std::vector<ClassScore> evaluate_instances(const InstanceMap& gt, const std::map<std::uint32_t, ClassId>& gt_classes,
                                           const LabelRaster& pred, const ClassMap& map,
                                           const Taxonomy& tax = Taxonomy::builtin());

struct SemanticScore {
  ClassId cls;
  std::uint64_t gt_pixels = 0;
  std::uint64_t pred_pixels = 0;
  std::uint64_t intersection = 0;
  double dice = 0.0;
  double iou = 0.0;
};

std::vector<SemanticScore> evaluate_semantic(const LabelRaster& gt, const LabelRaster& pred,
                                             const std::vector<ClassId>& classes);

nlohmann::json to_json(const std::vector<SemanticScore>& s, const Taxonomy& tax = Taxonomy::builtin());
nlohmann::json to_json(const std::vector<ClassScore>& s, const Taxonomy& tax = Taxonomy::builtin());

/// Aligned text table, one row per class, like the published score tables.
std::string format_table(const std::vector<SemanticScore>& s, const Taxonomy& tax = Taxonomy::builtin());
std::string format_table(const std::vector<ClassScore>& s, const Taxonomy& tax = Taxonomy::builtin());

}  // namespace tmeseg
