#include "tmeseg/postprocess.hpp"

#include <algorithm>
#include <set>

#include "tmeseg/parallel.hpp"

namespace tmeseg {

namespace {

struct Planes {
  std::vector<ClassId> ids;
  std::vector<const float*> data;
};

// Ascending ids so a strict '>' scan keeps the lowest id on ties.
Planes planes_for(const LogitStack& s, std::vector<ClassId> ids) {
  std::sort(ids.begin(), ids.end());
  Planes p;
  p.ids = ids;
  for (ClassId c : ids) p.data.push_back(s.plane(c).pixels().data());
  return p;
}

ClassId argmax_at(const Planes& p, std::size_t i) {
  std::size_t best = 0;
  float best_v = p.data[0][i];
  for (std::size_t k = 1; k < p.data.size(); ++k) {
    if (p.data[k][i] > best_v) {
      best_v = p.data[k][i];
      best = k;
    }
  }
  return p.ids[best];
}

}  // namespace

void check_student_logits(const LogitStack& s, const Taxonomy& tax) {
  std::set<ClassId> have(s.channels().begin(), s.channels().end());
  if (have.size() != s.channels().size() || have.size() != tax.size()) {
    throw data_error("student logits must carry exactly the " + std::to_string(tax.size()) + " taxonomy classes");
  }
  for (const auto& c : tax.classes()) {
    if (!have.contains(c.id)) throw data_error("student logits: missing channel '" + c.name + "'");
  }
  s.validate();
}

LabelRaster force_mode(const LogitStack& s, const StudentClassSets& sets, const Taxonomy& tax, int workers) {
  check_student_logits(s, tax);
  std::vector<ClassId> all;
  for (const auto& c : tax.classes()) all.push_back(c.id);
  const Planes every = planes_for(s, all);
  const Planes subtypes = planes_for(s, sets.leukocyte_subtypes);
  LabelRaster out(s.width(), s.height());
  auto px = out.pixels();
  parallel_for(px.size(), workers, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      ClassId c = argmax_at(every, i);
      if (c == cls::leukocyte) c = argmax_at(subtypes, i);
      px[i] = c;
    }
  });
  return out;
}

NucleusAssignment assign_nuclei(const LogitStack& s, const InstanceMap& nuclei, const StudentClassSets& sets,
                                const Taxonomy& tax, int workers) {
  check_student_logits(s, tax);
  if (nuclei.width() != s.width() || nuclei.height() != s.height()) {
    throw data_error("assign_nuclei: nucleus map and logits differ in size");
  }
  if (std::find(sets.nucleus_classes.begin(), sets.nucleus_classes.end(), cls::leukocyte) !=
      sets.nucleus_classes.end()) {
    throw usage_error("assign_nuclei: leukocyte cannot be a nucleus class");
  }
  const Planes tissue = planes_for(s, sets.tissue_classes);
  const Planes nucleus = planes_for(s, sets.nucleus_classes);

  NucleusAssignment out;
  out.labels = LabelRaster(s.width(), s.height());
  auto px = out.labels.pixels();
  parallel_for(px.size(), workers, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) px[i] = argmax_at(tissue, i);
  });

  const auto lists = nuclei.pixel_lists();
  std::vector<std::uint32_t> ids;
  for (const auto& [id, p] : lists) ids.push_back(id);
  std::vector<ClassId> chosen(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> sums(nucleus.ids.size());
    for (std::size_t n = i0; n < i1; ++n) {
      std::fill(sums.begin(), sums.end(), 0.0);
      for (std::uint32_t p : lists.at(ids[n])) {
        for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += nucleus.data[k][p];
      }
      const auto best = std::max_element(sums.begin(), sums.end()) - sums.begin();
      chosen[n] = nucleus.ids[static_cast<std::size_t>(best)];
    }
  });
  for (std::size_t n = 0; n < ids.size(); ++n) {
    out.nucleus_class[ids[n]] = chosen[n];
    for (std::uint32_t p : lists.at(ids[n])) px[p] = chosen[n];
  }
  return out;
}

}  // namespace tmeseg
