#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "tmeseg/raster.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

/// Class partitions used when turning student logits into labels.
struct StudentClassSets {
  /// Replacement candidates for a pixel whose overall argmax is leukocyte.
  std::vector<ClassId> leukocyte_subtypes{cls::lymphocyte, cls::plasma_cell, cls::myeloid_cell, cls::eosinophil,
                                          cls::neutrophil};
  /// Classes a nucleus instance can take.
  std::vector<ClassId> nucleus_classes{cls::endothelial,  cls::lymphocyte, cls::plasma_cell,
                                       cls::myeloid_cell, cls::eosinophil, cls::neutrophil,
                                       cls::epithelial_cell_nucleus, cls::fibroblast, cls::mitotic_cell};
  /// Classes a pixel outside every nucleus can take.
  std::vector<ClassId> tissue_classes{cls::background, cls::stroma, cls::smooth_muscle, cls::epithelial_tissue,
                                      cls::red_blood_cell};
};

/// Throws unless the stack carries exactly the taxonomy's classes.
void check_student_logits(const LogitStack& s, const Taxonomy& tax = Taxonomy::builtin());

/// Per-pixel argmax (ties to the lowest id); leukocyte winners are replaced
/// by the best leukocyte subtype regardless of sign.
LabelRaster force_mode(const LogitStack& s, const StudentClassSets& sets = {},
                       const Taxonomy& tax = Taxonomy::builtin(), int workers = 1);

struct NucleusAssignment {
  LabelRaster labels;
  std::map<std::uint32_t, ClassId> nucleus_class;
};

/// Each nucleus takes the nucleus class with the largest logit sum over its
/// pixels; every other pixel takes the best tissue class.
NucleusAssignment assign_nuclei(const LogitStack& s, const InstanceMap& nuclei, const StudentClassSets& sets = {},
                                const Taxonomy& tax = Taxonomy::builtin(), int workers = 1);

}  // namespace tmeseg
