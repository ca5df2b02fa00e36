#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "tmeseg/raster.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

struct MitosisCandidate {
  double x = 0.0;
  double y = 0.0;
  double score = 1.0;
  bool operator==(const MitosisCandidate&) const = default;
};

/// Everything the teachers produced for one tile.
struct TeacherBundle {
  RgbTile he;
  LogitStack tissue_logits;  // smooth_muscle, epithelial_tissue, red_blood_cell
  LogitStack cell_logits;    // all hierarchy classes
  InstanceMap nuclei;
  std::vector<MitosisCandidate> mitosis_candidates;

  int width() const { return he.width(); }
  int height() const { return he.height(); }

  /// Checks shapes, required channels, finiteness, instance attributes and
  /// candidate coordinates. Throws a data error on the first violation.
  void validate(const Taxonomy& tax = Taxonomy::builtin()) const;

  /// Sub-bundle for the rectangle; candidates are shifted and filtered.
  TeacherBundle crop(int x0, int y0, int w, int h) const;
};

enum class DarkStatistic { median, mean, fraction };

struct AggregatorConfig {
  double sigma = 2.0;
  /// Skips Otsu on the smoothed tile when set.
  std::optional<std::uint8_t> background_threshold;
  int roi_radius = 30;
  int dark_sum_threshold = 40;
  DarkStatistic dark_statistic = DarkStatistic::median;
  /// Used by DarkStatistic::fraction: discard when at least this fraction
  /// of ROI pixels is dark.
  double dark_fraction = 0.5;
  std::uint64_t min_contour_area = 3;
  double candidate_score_threshold = 0.0;
  /// Nucleus-pixel fraction that must lie on the tissue (strictly greater).
  double epithelial_overlap = 0.5;
  double stroma_overlap = 0.5;
  int workers = 1;
};

struct TissueSegmentation {
  LabelRaster labels;  // background, stroma, smooth_muscle, epithelial_tissue, red_blood_cell
  std::uint8_t background_threshold = 0;
};

/// Background by Otsu on the smoothed tile (pixels brighter than the
/// threshold), then positive smooth-muscle / epithelium logits (larger wins,
/// ties to the lower id), red blood cells overlaid, remainder stroma.
TissueSegmentation tissue_segmentation(const TeacherBundle& b, const AggregatorConfig& cfg,
                                       const Taxonomy& tax = Taxonomy::builtin());

struct NucleusClassification {
  std::optional<ClassId> cls;  // nullopt = undefined
  /// Pixels whose level-l argmax was positive, per level.
  std::array<std::uint32_t, kHierarchyLevels> level_fired{};
  std::vector<std::uint32_t> votes;  // indexed by ClassId
  std::uint32_t undefined_votes = 0;
};

/// Per-pixel walk through the hierarchy levels with positive-logit
/// override, then a majority vote over the nucleus pixels.
NucleusClassification classify_nucleus(std::span<const std::uint32_t> pixels, const LogitStack& logits,
                                       const Taxonomy& tax = Taxonomy::builtin());

enum class FallbackRule { none, level1_epithelium, epithelial_tissue, connective_in_stroma };

struct NucleusDecision {
  NucleusClassification hierarchy;
  FallbackRule fallback = FallbackRule::none;
  bool mitotic = false;
  std::optional<ClassId> final_class;
};

/// Rewrites `undefined` (and level-1-only epithelium) nuclei using the
/// tissue context and the teacher nucleus type.
void fallback_rules(const InstanceMap& nuclei, const std::map<std::uint32_t, std::vector<std::uint32_t>>& pixels,
                    const LabelRaster& tissue, const AggregatorConfig& cfg,
                    std::map<std::uint32_t, NucleusDecision>& decisions);

enum class CandidateOutcome { accepted, low_score, dark, no_contour, no_epithelial_overlap };

struct MitosisDetection {
  IdRaster regions;  // 0 = none, else region id 1..n
  BitMask mask;
  std::vector<CandidateOutcome> outcomes;  // parallel to the input candidate list
  std::uint32_t region_count = 0;
};

/// Circular ROI per candidate, carbon-dust rejection, Otsu + contours with
/// the minimum area, convex hulls kept when they touch epithelial tissue.
/// Candidates are visited in (y, x, score) order and a pixel keeps the
/// first region id written to it, so the result ignores input order.
MitosisDetection detect_mitosis(std::span<const MitosisCandidate> candidates, const RgbTile& he,
                                const LabelRaster& tissue, const AggregatorConfig& cfg);

/// Marks every nucleus with at least one pixel in the mask as mitotic.
void apply_mitosis(const std::map<std::uint32_t, std::vector<std::uint32_t>>& pixels, const BitMask& mitosis_mask,
                   std::map<std::uint32_t, NucleusDecision>& decisions);

struct AggregationResult {
  LabelRaster semantic;
  LabelRaster tissue;
  InstanceMap instances;
  std::map<std::uint32_t, NucleusDecision> decisions;
  MitosisDetection mitosis;
  std::uint8_t background_threshold = 0;

  std::optional<ClassId> class_of(std::uint32_t nucleus) const;
};

/// The complete teacher-aggregation pipeline for one tile.
AggregationResult aggregate(const TeacherBundle& b, const AggregatorConfig& cfg = {},
                            const Taxonomy& tax = Taxonomy::builtin());

/// Channels the bundle's logit stacks must carry.
std::vector<ClassId> tissue_channels();
std::vector<ClassId> cell_channels(const Taxonomy& tax = Taxonomy::builtin());

}  // namespace tmeseg
