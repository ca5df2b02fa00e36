#include "tmeseg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace tmeseg {

namespace {

struct Overlap {
  std::uint64_t x = 0, y = 0, both = 0;
};

Overlap overlap(const BitMask& x, const BitMask& y) {
  if (!x.same_shape(y)) throw data_error("mask dimensions differ");
  Overlap o;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool a = x[i] != 0;
    const bool b = y[i] != 0;
    o.x += a;
    o.y += b;
    o.both += a && b;
  }
  return o;
}

}  // namespace

double dice(const BitMask& x, const BitMask& y) {
  const Overlap o = overlap(x, y);
  if (o.x + o.y == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.x + o.y);
}

double iou(const BitMask& x, const BitMask& y) {
  const Overlap o = overlap(x, y);
  const std::uint64_t uni = o.x + o.y - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

double mcc(const ConfusionCounts& c) {
  const auto tp = static_cast<double>(c.tp);
  const auto tn = static_cast<double>(c.tn);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  const double a = tp + fp, b = tp + fn, d = tn + fp, e = tn + fn;
  if (a == 0.0 || b == 0.0 || d == 0.0 || e == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(a * b * d * e);
}

// ---------------------------------------------------------------------------

InstanceEvaluator::InstanceEvaluator(const ClassMap& map, const Taxonomy& tax) : map_(map), tax_(&tax) {}

void InstanceEvaluator::add(const InstanceMap& gt, const std::map<std::uint32_t, ClassId>& gt_classes,
                            const LabelRaster& pred) {
  if (!pred.same_shape(gt.width(), gt.height())) throw data_error("evaluate: GT and prediction differ in size");
  const auto lists = gt.pixel_lists();
  std::vector<std::uint64_t> cover(tax_->size());
  for (const auto& [id, px] : lists) {
    const auto it = gt_classes.find(id);
    if (it == gt_classes.end()) throw data_error("evaluate: GT instance " + std::to_string(id) + " has no class");
    const auto gt_cls = map_.apply(it->second);
    if (!gt_cls) {
      throw data_error("evaluate: GT class '" + tax_->name_of(it->second) + "' is unmapped; check the class map");
    }
    std::fill(cover.begin(), cover.end(), 0);
    for (std::uint32_t p : px) {
      if (!tax_->valid(pred[p])) throw data_error("evaluate: prediction holds an invalid class id");
      if (auto m = map_.apply(pred[p])) ++cover[m->index()];
    }
    EvalUnit u{id, *gt_cls, std::nullopt};
    std::size_t best = 0;
    for (std::size_t c = 1; c < cover.size(); ++c) {
      if (cover[c] > cover[best]) best = c;
    }
    if (cover[best] > 0) u.pred = ClassId(static_cast<std::uint8_t>(best));
    units_.push_back(u);
  }
}

void InstanceEvaluator::merge(const InstanceEvaluator& other) {
  units_.insert(units_.end(), other.units_.begin(), other.units_.end());
}

std::vector<ClassScore> InstanceEvaluator::scores() const {
  std::vector<ClassScore> out;
  for (ClassId c : map_.targets()) {
    ClassScore s{c, {}, 0, std::nullopt};
    for (const auto& u : units_) {
      const bool g = u.gt == c;
      const bool p = u.pred == c;
      if (g) ++s.gt_units;
      if (g && p) {
        ++s.counts.tp;
      } else if (g) {
        ++s.counts.fn;
      } else if (p) {
        ++s.counts.fp;
      } else {
        ++s.counts.tn;
      }
    }
    if (s.gt_units > 0) s.mcc = mcc(s.counts);
    out.push_back(s);
  }
  return out;
}

std::vector<ClassScore> evaluate_instances(const InstanceMap& gt, const std::map<std::uint32_t, ClassId>& gt_classes,
                                           const LabelRaster& pred, const ClassMap& map, const Taxonomy& tax) {
  InstanceEvaluator ev(map, tax);
  ev.add(gt, gt_classes, pred);
  return ev.scores();
}

std::vector<SemanticScore> evaluate_semantic(const LabelRaster& gt, const LabelRaster& pred,
                                             const std::vector<ClassId>& classes) {
  if (!gt.same_shape(pred)) throw data_error("evaluate: GT and prediction differ in size");
  std::vector<SemanticScore> out;
  for (ClassId c : classes) {
    SemanticScore s{c};
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const bool g = gt[i] == c;
      const bool p = pred[i] == c;
      s.gt_pixels += g;
      s.pred_pixels += p;
      s.intersection += g && p;
    }
    const std::uint64_t sum = s.gt_pixels + s.pred_pixels;
    const std::uint64_t uni = sum - s.intersection;
    s.dice = sum == 0 ? 1.0 : 2.0 * static_cast<double>(s.intersection) / static_cast<double>(sum);
    s.iou = uni == 0 ? 1.0 : static_cast<double>(s.intersection) / static_cast<double>(uni);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const std::vector<SemanticScore>& scores, const Taxonomy& tax) {
  auto rows = nlohmann::json::array();
  for (const auto& s : scores) {
    rows.push_back({{"class", tax.name_of(s.cls)},
                    {"abbrev", tax.abbrev_of(s.cls)},
                    {"gt_pixels", s.gt_pixels},
                    {"pred_pixels", s.pred_pixels},
                    {"intersection", s.intersection},
                    {"dice", s.dice},
                    {"iou", s.iou}});
  }
  return rows;
}

nlohmann::json to_json(const std::vector<ClassScore>& scores, const Taxonomy& tax) {
  auto rows = nlohmann::json::array();
  for (const auto& s : scores) {
    nlohmann::json r{{"class", tax.name_of(s.cls)},
                     {"abbrev", tax.abbrev_of(s.cls)},
                     {"gt_units", s.gt_units},
                     {"tp", s.counts.tp},
                     {"tn", s.counts.tn},
                     {"fp", s.counts.fp},
                     {"fn", s.counts.fn}};
    r["mcc"] = s.mcc ? nlohmann::json(*s.mcc) : nlohmann::json();
    r["applicable"] = s.mcc.has_value();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_table(const std::vector<SemanticScore>& scores, const Taxonomy& tax) {
  std::string out = fmt::format("{:<26}{:>7}{:>10}{:>10}\n", "class", "abbrev", "dice", "iou");
  for (const auto& s : scores) {
    out += fmt::format("{:<26}{:>7}{:>10.3f}{:>10.3f}\n", tax.name_of(s.cls), tax.abbrev_of(s.cls), s.dice, s.iou);
  }
  return out;
}

std::string format_table(const std::vector<ClassScore>& scores, const Taxonomy& tax) {
  std::string out = fmt::format("{:<26}{:>7}{:>8}{:>10}\n", "class", "abbrev", "n", "mcc");
  for (const auto& s : scores) {
    const std::string v = s.mcc ? fmt::format("{:.3f}", *s.mcc) : std::string("n/a");
    out += fmt::format("{:<26}{:>7}{:>8}{:>10}\n", tax.name_of(s.cls), tax.abbrev_of(s.cls), s.gt_units, v);
  }
  return out;
}

}  // namespace tmeseg
