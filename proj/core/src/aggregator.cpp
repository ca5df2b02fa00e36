#include "tmeseg/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tmeseg/parallel.hpp"

namespace tmeseg {

std::vector<ClassId> tissue_channels() {
  return {cls::smooth_muscle, cls::epithelial_tissue, cls::red_blood_cell};
}

std::vector<ClassId> cell_channels(const Taxonomy& tax) {
  std::vector<ClassId> out;
  for (const auto& level : tax.hierarchy()) out.insert(out.end(), level.begin(), level.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// TeacherBundle

void TeacherBundle::validate(const Taxonomy& tax) const {
  const int w = he.width();
  const int h = he.height();
  if (w < 1 || h < 1) throw data_error("bundle: H&E tile must be at least 1x1");
  const auto check_shape = [&](int ow, int oh, const char* what) {
    if (ow != w || oh != h) {
      throw data_error(std::string("bundle: ") + what + " is " + std::to_string(ow) + "x" + std::to_string(oh) +
                       ", H&E is " + std::to_string(w) + "x" + std::to_string(h));
    }
  };
  check_shape(tissue_logits.width(), tissue_logits.height(), "tissue logits");
  check_shape(cell_logits.width(), cell_logits.height(), "cell logits");
  check_shape(nuclei.width(), nuclei.height(), "nucleus map");
  tissue_logits.require(tissue_channels(), tax, "tissue logits");
  cell_logits.require(cell_channels(tax), tax, "cell logits");
  tissue_logits.validate();
  cell_logits.validate();
  nuclei.validate();
  for (const auto& c : mitosis_candidates) {
    if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.score)) {
      throw data_error("bundle: non-finite mitosis candidate");
    }
    const long cx = std::lround(c.x);
    const long cy = std::lround(c.y);
    if (cx < 0 || cy < 0 || cx >= w || cy >= h) {
      throw data_error("bundle: mitosis candidate (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                       ") outside the tile");
    }
  }
}

TeacherBundle TeacherBundle::crop(int x0, int y0, int w, int h) const {
  TeacherBundle out;
  out.he = he.crop(x0, y0, w, h);
  out.tissue_logits = tissue_logits.crop(x0, y0, w, h);
  out.cell_logits = cell_logits.crop(x0, y0, w, h);
  out.nuclei = nuclei.crop(x0, y0, w, h);
  for (const auto& c : mitosis_candidates) {
    const MitosisCandidate s{c.x - x0, c.y - y0, c.score};
    const long cx = std::lround(s.x);
    const long cy = std::lround(s.y);
    if (cx >= 0 && cy >= 0 && cx < w && cy < h) out.mitosis_candidates.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tissue

TissueSegmentation tissue_segmentation(const TeacherBundle& b, const AggregatorConfig& cfg, const Taxonomy& tax) {
  b.tissue_logits.require(tissue_channels(), tax, "tissue logits");
  TissueSegmentation out;
  const GrayRaster gray = to_gray(gaussian_smooth(b.he, cfg.sigma, cfg.workers));
  out.background_threshold = cfg.background_threshold ? *cfg.background_threshold : otsu_threshold(gray);
  const std::uint8_t t = out.background_threshold;

  const auto sm = b.tissue_logits.plane(cls::smooth_muscle).pixels();
  const auto epi = b.tissue_logits.plane(cls::epithelial_tissue).pixels();
  const auto rbc = b.tissue_logits.plane(cls::red_blood_cell).pixels();
  out.labels = LabelRaster(b.width(), b.height(), cls::background);
  auto labels = out.labels.pixels();
  parallel_for(labels.size(), cfg.workers, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      if (gray[i] > t) continue;
      ClassId label = cls::stroma;
      if (sm[i] > 0.0f && sm[i] >= epi[i]) {
        label = cls::smooth_muscle;
      } else if (epi[i] > 0.0f) {
        label = cls::epithelial_tissue;
      }
      if (rbc[i] > 0.0f) label = cls::red_blood_cell;
      labels[i] = label;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchical classification

NucleusClassification classify_nucleus(std::span<const std::uint32_t> pixels, const LogitStack& logits,
                                       const Taxonomy& tax) {
  NucleusClassification out;
  out.votes.assign(tax.size(), 0);

  // Channels per level in ascending id order so a strict '>' keeps the
  // lowest id on ties.
  std::array<std::vector<std::pair<ClassId, const float*>>, kHierarchyLevels> levels;
  for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
    std::vector<ClassId> ids(tax.hierarchy()[l].begin(), tax.hierarchy()[l].end());
    std::sort(ids.begin(), ids.end());
    for (ClassId c : ids) levels[l].emplace_back(c, logits.plane(c).pixels().data());
  }

  for (std::uint32_t p : pixels) {
    std::optional<ClassId> current;
    for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
      const auto& chans = levels[l];
      ClassId best = chans[0].first;
      float best_v = chans[0].second[p];
      for (std::size_t k = 1; k < chans.size(); ++k) {
        const float v = chans[k].second[p];
        if (v > best_v) {
          best_v = v;
          best = chans[k].first;
        }
      }
      if (best_v > 0.0f) {
        current = best;
        ++out.level_fired[l];
      }
    }
    if (current) {
      ++out.votes[current->index()];
    } else {
      ++out.undefined_votes;
    }
  }

  std::size_t best = 0;
  for (std::size_t c = 1; c < out.votes.size(); ++c) {
    if (out.votes[c] > out.votes[best]) best = c;
  }
  if (out.votes[best] > 0 && out.votes[best] >= out.undefined_votes) {
    out.cls = ClassId(static_cast<std::uint8_t>(best));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fallbacks

void fallback_rules(const InstanceMap& nuclei, const std::map<std::uint32_t, std::vector<std::uint32_t>>& pixels,
                    const LabelRaster& tissue, const AggregatorConfig& cfg,
                    std::map<std::uint32_t, NucleusDecision>& decisions) {
  if (!tissue.same_shape(nuclei.width(), nuclei.height())) {
    throw data_error("fallback_rules: tissue and nucleus rasters differ in size");
  }
  for (auto& [id, d] : decisions) {
    const auto& cls_now = d.hierarchy.cls;
    if (cls_now == cls::epithelial_tissue) {
      d.final_class = cls::epithelial_cell_nucleus;
      d.fallback = FallbackRule::level1_epithelium;
      continue;
    }
    d.final_class = cls_now;
    if (cls_now) continue;

    const auto& px = pixels.at(id);
    std::uint64_t on_epi = 0;
    std::uint64_t on_stroma = 0;
    for (std::uint32_t p : px) {
      on_epi += tissue[p] == cls::epithelial_tissue ? 1 : 0;
      on_stroma += tissue[p] == cls::stroma ? 1 : 0;
    }
    const auto n = static_cast<double>(px.size());
    const auto attrs = nuclei.attrs.find(id);
    const bool connective = attrs != nuclei.attrs.end() && attrs->second.teacher_type == NucleusType::connective;
    if (static_cast<double>(on_epi) > cfg.epithelial_overlap * n) {
      d.final_class = cls::epithelial_cell_nucleus;
      d.fallback = FallbackRule::epithelial_tissue;
    } else if (connective && static_cast<double>(on_stroma) > cfg.stroma_overlap * n) {
      d.final_class = cls::fibroblast;
      d.fallback = FallbackRule::connective_in_stroma;
    }
  }
}

// ---------------------------------------------------------------------------
// Mitosis

namespace {

struct Roi {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  BitMask inside;  // disc membership in bbox coordinates
};

Roi circular_roi(const MitosisCandidate& c, int radius, int width, int height) {
  const int cx = static_cast<int>(std::lround(c.x));
  const int cy = static_cast<int>(std::lround(c.y));
  Roi roi;
  roi.x0 = std::max(0, cx - radius);
  roi.y0 = std::max(0, cy - radius);
  const int x1 = std::min(width - 1, cx + radius);
  const int y1 = std::min(height - 1, cy + radius);
  roi.w = x1 - roi.x0 + 1;
  roi.h = y1 - roi.y0 + 1;
  roi.inside = BitMask(roi.w, roi.h, 0);
  const long r2 = static_cast<long>(radius) * radius;
  for (int y = 0; y < roi.h; ++y) {
    for (int x = 0; x < roi.w; ++x) {
      const long dx = roi.x0 + x - cx;
      const long dy = roi.y0 + y - cy;
      if (dx * dx + dy * dy <= r2) roi.inside(x, y) = 1;
    }
  }
  return roi;
}

bool is_dark(const std::vector<int>& sums, const AggregatorConfig& cfg) {
  if (sums.empty()) return false;
  switch (cfg.dark_statistic) {
    case DarkStatistic::median: {
      std::vector<int> s = sums;
      const auto mid = s.begin() + static_cast<std::ptrdiff_t>((s.size() - 1) / 2);
      std::nth_element(s.begin(), mid, s.end());
      return *mid <= cfg.dark_sum_threshold;
    }
    case DarkStatistic::mean: {
      const double total = std::accumulate(sums.begin(), sums.end(), 0.0);
      return total / static_cast<double>(sums.size()) <= cfg.dark_sum_threshold;
    }
    case DarkStatistic::fraction: {
      const auto dark = std::count_if(sums.begin(), sums.end(), [&](int s) { return s <= cfg.dark_sum_threshold; });
      return static_cast<double>(dark) >= cfg.dark_fraction * static_cast<double>(sums.size());
    }
  }
  return false;
}

struct CandidateRegions {
  CandidateOutcome outcome = CandidateOutcome::no_contour;
  std::vector<std::vector<std::uint32_t>> regions;  // global pixel indices, raster order
};

CandidateRegions process_candidate(const MitosisCandidate& c, const RgbTile& he, const LabelRaster& tissue,
                                   const AggregatorConfig& cfg) {
  CandidateRegions out;
  if (c.score < cfg.candidate_score_threshold) {
    out.outcome = CandidateOutcome::low_score;
    return out;
  }
  const Roi roi = circular_roi(c, cfg.roi_radius, he.width(), he.height());

  std::vector<int> sums;
  Histogram hist{};
  for (int y = 0; y < roi.h; ++y) {
    for (int x = 0; x < roi.w; ++x) {
      if (!roi.inside(x, y)) continue;
      const Rgb p = he(roi.x0 + x, roi.y0 + y);
      sums.push_back(p.sum());
      ++hist[gray_of(p)];
    }
  }
  if (is_dark(sums, cfg)) {
    out.outcome = CandidateOutcome::dark;
    return out;
  }

  const std::uint8_t t = otsu_threshold(hist);
  BitMask fg(roi.w, roi.h, 0);
  for (int y = 0; y < roi.h; ++y) {
    for (int x = 0; x < roi.w; ++x) {
      if (roi.inside(x, y) && gray_of(he(roi.x0 + x, roi.y0 + y)) <= t) fg(x, y) = 1;
    }
  }

  bool any_contour = false;
  for (const Contour& ct : contours(fg)) {
    if (ct.area < cfg.min_contour_area) continue;
    any_contour = true;
    const BitMask hull = rasterize_hull(convex_hull(ct.pixels), roi.w, roi.h);
    std::vector<std::uint32_t> region;
    bool touches_epi = false;
    for (int y = 0; y < roi.h; ++y) {
      for (int x = 0; x < roi.w; ++x) {
        if (!hull(x, y)) continue;
        const std::size_t gi = he.index(roi.x0 + x, roi.y0 + y);
        region.push_back(static_cast<std::uint32_t>(gi));
        touches_epi = touches_epi || tissue[gi] == cls::epithelial_tissue;
      }
    }
    if (touches_epi) out.regions.push_back(std::move(region));
  }
  if (!out.regions.empty()) {
    out.outcome = CandidateOutcome::accepted;
  } else {
    out.outcome = any_contour ? CandidateOutcome::no_epithelial_overlap : CandidateOutcome::no_contour;
  }
  return out;
}

}  // namespace

MitosisDetection detect_mitosis(std::span<const MitosisCandidate> candidates, const RgbTile& he,
                                const LabelRaster& tissue, const AggregatorConfig& cfg) {
  if (!tissue.same_shape(he)) throw data_error("detect_mitosis: tissue and H&E differ in size");
  if (cfg.roi_radius < 0) throw usage_error("detect_mitosis: negative ROI radius");

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = candidates[a];
    const auto& cb = candidates[b];
    if (ca.y != cb.y) return ca.y < cb.y;
    if (ca.x != cb.x) return ca.x < cb.x;
    if (ca.score != cb.score) return ca.score < cb.score;
    return a < b;
  });

  std::vector<CandidateRegions> per(candidates.size());
  parallel_for(candidates.size(), cfg.workers, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) per[i] = process_candidate(candidates[i], he, tissue, cfg);
  });

  MitosisDetection out;
  out.regions = IdRaster(he.width(), he.height(), 0u);
  out.mask = BitMask(he.width(), he.height(), 0);
  out.outcomes.resize(candidates.size());
  for (std::size_t k : order) {
    out.outcomes[k] = per[k].outcome;
    for (const auto& region : per[k].regions) {
      const std::uint32_t id = ++out.region_count;
      for (std::uint32_t p : region) {
        if (out.regions[p] == 0) out.regions[p] = id;
        out.mask[p] = 1;
      }
    }
  }
  return out;
}

void apply_mitosis(const std::map<std::uint32_t, std::vector<std::uint32_t>>& pixels, const BitMask& mitosis_mask,
                   std::map<std::uint32_t, NucleusDecision>& decisions) {
  for (auto& [id, d] : decisions) {
    const auto& px = pixels.at(id);
    const bool hit = std::any_of(px.begin(), px.end(), [&](std::uint32_t p) { return mitosis_mask[p] != 0; });
    if (hit) {
      d.mitotic = true;
      d.final_class = cls::mitotic_cell;
    }
  }
}

// ---------------------------------------------------------------------------

std::optional<ClassId> AggregationResult::class_of(std::uint32_t nucleus) const {
  const auto it = decisions.find(nucleus);
  if (it == decisions.end()) return std::nullopt;
  return it->second.final_class;
}

AggregationResult aggregate(const TeacherBundle& b, const AggregatorConfig& cfg, const Taxonomy& tax) {
  b.validate(tax);
  AggregationResult out;

  TissueSegmentation tissue = tissue_segmentation(b, cfg, tax);
  out.background_threshold = tissue.background_threshold;
  out.tissue = std::move(tissue.labels);

  const auto pixels = b.nuclei.pixel_lists();
  std::vector<std::uint32_t> ids;
  ids.reserve(pixels.size());
  for (const auto& [id, px] : pixels) ids.push_back(id);
  std::vector<NucleusClassification> classified(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) classified[i] = classify_nucleus(pixels.at(ids[i]), b.cell_logits, tax);
  });
  for (std::size_t i = 0; i < ids.size(); ++i) out.decisions[ids[i]].hierarchy = std::move(classified[i]);

  fallback_rules(b.nuclei, pixels, out.tissue, cfg, out.decisions);
  out.mitosis = detect_mitosis(b.mitosis_candidates, b.he, out.tissue, cfg);
  apply_mitosis(pixels, out.mitosis.mask, out.decisions);

  out.semantic = out.tissue;
  for (const auto& [id, d] : out.decisions) {
    if (!d.final_class) continue;
    for (std::uint32_t p : pixels.at(id)) out.semantic[p] = *d.final_class;
  }
  out.instances = b.nuclei;
  return out;
}

}  // namespace tmeseg
