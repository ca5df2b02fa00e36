#include <doctest.h>

#include <algorithm>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/testkit/synth.hpp"

using namespace tmeseg;
using tmeseg::testkit::Rng;

namespace {

// Uniform mid-grey H&E, every logit -1, no nuclei, no candidates.
TeacherBundle blank(int w, int h, Rgb colour = Rgb{128, 128, 128}) {
  TeacherBundle b;
  b.he = RgbTile(w, h, colour);
  b.tissue_logits = LogitStack(w, h, tissue_channels());
  b.cell_logits = LogitStack(w, h, cell_channels());
  for (std::size_t c = 0; c < b.tissue_logits.channels().size(); ++c) b.tissue_logits.plane_at(c).fill(-1.0f);
  for (std::size_t c = 0; c < b.cell_logits.channels().size(); ++c) b.cell_logits.plane_at(c).fill(-1.0f);
  b.nuclei = InstanceMap(w, h);
  return b;
}

void add_nucleus(TeacherBundle& b, std::uint32_t id, int x0, int y0, int w, int h,
                 NucleusType type = NucleusType::none) {
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) b.nuclei.ids(x, y) = id;
  }
  b.nuclei.attrs[id].teacher_type = type;
  b.nuclei.refresh_attrs();
}

std::vector<std::uint32_t> all_pixels(int n) {
  std::vector<std::uint32_t> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
  return v;
}

// Bright field with the candidate at (40, 40); returns the bundle with all
// tissue marked epithelial.
TeacherBundle mitosis_field() {
  TeacherBundle b = blank(81, 81, Rgb{240, 240, 240});
  b.tissue_logits.plane(cls::epithelial_tissue).fill(2.0f);
  b.mitosis_candidates.push_back({40, 40, 1.0});
  return b;
}

AggregatorConfig no_background() {
  AggregatorConfig cfg;
  cfg.background_threshold = 255;
  return cfg;
}

}  // namespace

TEST_CASE("tissue segmentation rules") {
  SUBCASE("all logits negative on mid-grey is all stroma") {
    const TeacherBundle b = blank(16, 12);
    const auto t = tissue_segmentation(b, {});
    CHECK(t.background_threshold == 128);
    for (ClassId c : t.labels.pixels()) CHECK(c == cls::stroma);
  }
  SUBCASE("precedence") {
    TeacherBundle b = blank(4, 1);
    auto& sm = b.tissue_logits.plane(cls::smooth_muscle);
    auto& epi = b.tissue_logits.plane(cls::epithelial_tissue);
    auto& rbc = b.tissue_logits.plane(cls::red_blood_cell);
    sm(0, 0) = 2.0f, epi(0, 0) = 1.0f, rbc(0, 0) = -1.0f;  // larger positive wins
    sm(1, 0) = 2.0f, rbc(1, 0) = 0.1f;                     // RBC overlay
    sm(2, 0) = 1.5f, epi(2, 0) = 1.5f;                     // tie to the lower id
    sm(3, 0) = -0.5f, epi(3, 0) = 0.25f;
    const auto t = tissue_segmentation(b, {});
    CHECK(t.labels(0, 0) == cls::smooth_muscle);
    CHECK(t.labels(1, 0) == cls::red_blood_cell);
    CHECK(t.labels(2, 0) == cls::smooth_muscle);
    CHECK(t.labels(3, 0) == cls::epithelial_tissue);
  }
  SUBCASE("bright pixels are background and keep no tissue label") {
    TeacherBundle b = blank(20, 20);
    for (int y = 0; y < 20; ++y) {
      for (int x = 10; x < 20; ++x) b.he(x, y) = Rgb{240, 240, 240};
    }
    b.tissue_logits.plane(cls::red_blood_cell).fill(3.0f);
    const auto t = tissue_segmentation(b, {});
    CHECK(t.labels(0, 0) == cls::red_blood_cell);
    CHECK(t.labels(19, 19) == cls::background);
  }
  SUBCASE("threshold override") {
    AggregatorConfig cfg;
    cfg.background_threshold = 100;
    const auto t = tissue_segmentation(blank(3, 3), cfg);
    CHECK(t.background_threshold == 100);
    CHECK(t.labels(1, 1) == cls::background);
  }
  SUBCASE("missing channel") {
    TeacherBundle b = blank(3, 3);
    b.tissue_logits = LogitStack(3, 3, {cls::smooth_muscle, cls::epithelial_tissue});
    CHECK_THROWS_AS(tissue_segmentation(b, {}), Error);
  }
}

TEST_CASE("classify_nucleus examples") {
  SUBCASE("level-3 override of a level-2 leukocyte") {
    TeacherBundle b = blank(3, 3);
    b.cell_logits.plane(cls::leukocyte).fill(1.0f);
    b.cell_logits.plane(cls::lymphocyte).fill(2.0f);
    const auto r = classify_nucleus(all_pixels(9), b.cell_logits);
    CHECK(r.cls == cls::lymphocyte);
    CHECK(r.level_fired[1] == 9);
    CHECK(r.level_fired[2] == 9);
  }
  SUBCASE("level-2 label is kept when no subtype fires") {
    TeacherBundle b = blank(2, 2);
    b.cell_logits.plane(cls::leukocyte).fill(0.5f);
    CHECK(classify_nucleus(all_pixels(4), b.cell_logits).cls == cls::leukocyte);
  }
  SUBCASE("all logits non-positive is undefined") {
    TeacherBundle b = blank(3, 3);
    b.cell_logits.plane(cls::eosinophil).fill(0.0f);
    const auto r = classify_nucleus(all_pixels(9), b.cell_logits);
    CHECK_FALSE(r.cls.has_value());
    CHECK(r.undefined_votes == 9);
  }
  SUBCASE("majority and ties") {
    TeacherBundle b = blank(5, 1);
    auto& lym = b.cell_logits.plane(cls::lymphocyte);
    auto& pls = b.cell_logits.plane(cls::plasma_cell);
    lym(0, 0) = lym(1, 0) = lym(2, 0) = 1.0f;
    pls(3, 0) = pls(4, 0) = 1.0f;
    CHECK(classify_nucleus(all_pixels(5), b.cell_logits).cls == cls::lymphocyte);
    const std::vector<std::uint32_t> tie{1, 2, 3, 4};
    CHECK(classify_nucleus(tie, b.cell_logits).cls == cls::lymphocyte);
    const std::vector<std::uint32_t> plasma_side{2, 3, 4};
    CHECK(classify_nucleus(plasma_side, b.cell_logits).cls == cls::plasma_cell);
  }
  SUBCASE("equal logits within a level go to the lower id") {
    TeacherBundle b = blank(1, 1);
    b.cell_logits.plane(cls::eosinophil).fill(1.0f);
    b.cell_logits.plane(cls::neutrophil).fill(1.0f);
    CHECK(classify_nucleus(all_pixels(1), b.cell_logits).cls == cls::eosinophil);
  }
  SUBCASE("undefined must be a strict plurality") {
    TeacherBundle b = blank(5, 1);
    auto& lym = b.cell_logits.plane(cls::lymphocyte);
    lym(0, 0) = lym(1, 0) = 1.0f;
    const std::vector<std::uint32_t> even{0, 1, 2, 3};
    CHECK(classify_nucleus(even, b.cell_logits).cls == cls::lymphocyte);
    CHECK_FALSE(classify_nucleus(all_pixels(5), b.cell_logits).cls.has_value());
  }
}

TEST_CASE("fallback rules") {
  TeacherBundle b = blank(20, 10);
  auto& epi = b.tissue_logits.plane(cls::epithelial_tissue);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) epi(x, y) = 1.0f;
  }
  add_nucleus(b, 1, 2, 2, 5, 1);                          // undefined, on epithelium
  add_nucleus(b, 2, 12, 2, 3, 3, NucleusType::connective);  // undefined, stroma
  add_nucleus(b, 3, 12, 6, 3, 3, NucleusType::neoplastic);  // undefined, stroma
  add_nucleus(b, 4, 2, 6, 3, 3);                          // lymphocyte on epithelium
  add_nucleus(b, 5, 8, 5, 4, 1);                          // half on epithelium
  for (int y = 6; y < 9; ++y) {
    for (int x = 2; x < 5; ++x) b.cell_logits.plane(cls::lymphocyte)(x, y) = 1.0f;
  }
  const auto r = aggregate(b);
  CHECK(r.class_of(1) == cls::epithelial_cell_nucleus);
  CHECK(r.decisions.at(1).fallback == FallbackRule::epithelial_tissue);
  CHECK(r.class_of(2) == cls::fibroblast);
  CHECK_FALSE(r.class_of(3).has_value());
  CHECK(r.class_of(4) == cls::lymphocyte);
  CHECK(r.decisions.at(4).fallback == FallbackRule::none);
  CHECK_FALSE(r.class_of(5).has_value());  // exactly 50% is not a majority
  // Undefined nuclei keep the tissue label underneath.
  CHECK(r.semantic(13, 7) == cls::stroma);

  SUBCASE("80% of pixels on epithelium") {
    TeacherBundle c = blank(10, 1);
    for (int x = 0; x < 8; ++x) c.tissue_logits.plane(cls::epithelial_tissue)(x, 0) = 1.0f;
    add_nucleus(c, 7, 0, 0, 10, 1);
    CHECK(aggregate(c).class_of(7) == cls::epithelial_cell_nucleus);
  }
  SUBCASE("a level-1 epithelial result becomes an epithelial cell nucleus") {
    TeacherBundle c = blank(4, 4);
    add_nucleus(c, 1, 0, 0, 2, 2);
    c.cell_logits.plane(cls::epithelial_tissue).fill(1.0f);
    const auto rr = aggregate(c);
    CHECK(rr.decisions.at(1).hierarchy.cls == cls::epithelial_tissue);
    CHECK(rr.class_of(1) == cls::epithelial_cell_nucleus);
    CHECK(rr.decisions.at(1).fallback == FallbackRule::level1_epithelium);
  }
}

TEST_CASE("mitosis: carbon dust is discarded") {
  TeacherBundle b = mitosis_field();
  b.he.fill(Rgb{10, 10, 10});  // every ROI pixel has RGB sum 30
  const auto tissue = tissue_segmentation(b, no_background()).labels;
  const auto m = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
  CHECK(m.outcomes[0] == CandidateOutcome::dark);
  CHECK(count_set(m.mask) == 0);

  // Sum 41 is no longer dark under the median rule.
  b.he.fill(Rgb{14, 14, 13});
  const auto m2 = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
  CHECK(m2.outcomes[0] != CandidateOutcome::dark);
}

TEST_CASE("mitosis: dark statistic variants") {
  TeacherBundle b = mitosis_field();
  // Dark left half of the ROI: 30-radius disc, pixels with x <= 40.
  for (int y = 0; y < 81; ++y) {
    for (int x = 0; x <= 40; ++x) b.he(x, y) = Rgb{5, 5, 5};
  }
  const auto tissue = tissue_segmentation(b, no_background()).labels;
  AggregatorConfig cfg;
  cfg.dark_statistic = DarkStatistic::median;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] == CandidateOutcome::dark);
  cfg.dark_statistic = DarkStatistic::mean;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] != CandidateOutcome::dark);
  cfg.dark_statistic = DarkStatistic::fraction;
  cfg.dark_fraction = 0.5;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] == CandidateOutcome::dark);
  cfg.dark_fraction = 0.6;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] != CandidateOutcome::dark);
}

TEST_CASE("mitosis: area boundary and ROI radius") {
  TeacherBundle b = mitosis_field();
  const auto tissue = tissue_segmentation(b, no_background()).labels;

  SUBCASE("three pixels at the disc edge are kept") {
    for (int x = 68; x <= 70; ++x) b.he(x, 40) = Rgb{20, 20, 20};  // distances 28..30
    const auto m = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
    CHECK(m.outcomes[0] == CandidateOutcome::accepted);
    CHECK(m.region_count == 1);
    CHECK(count_set(m.mask) == 3);
  }
  SUBCASE("one pixel beyond radius 30 leaves an area-2 blob, rejected") {
    for (int x = 69; x <= 71; ++x) b.he(x, 40) = Rgb{20, 20, 20};  // 71 is at distance 31
    const auto m = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
    CHECK(m.outcomes[0] == CandidateOutcome::no_contour);
    CHECK(count_set(m.mask) == 0);
  }
  SUBCASE("area 2 rejected, area 3 kept") {
    b.he(40, 40) = b.he(41, 40) = Rgb{20, 20, 20};
    CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, {}).outcomes[0] == CandidateOutcome::no_contour);
    b.he(41, 41) = Rgb{20, 20, 20};
    const auto m = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
    CHECK(m.outcomes[0] == CandidateOutcome::accepted);
    CHECK(count_set(m.mask) == 3);  // the hull adds no pixel centres
  }
  SUBCASE("a larger radius reaches further") {
    for (int x = 69; x <= 71; ++x) b.he(x, 40) = Rgb{20, 20, 20};
    AggregatorConfig cfg;
    cfg.roi_radius = 31;
    CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] == CandidateOutcome::accepted);
  }
  SUBCASE("ROI is clipped at the tile border") {
    TeacherBundle c = mitosis_field();
    c.mitosis_candidates = {{0, 0, 1.0}};
    c.he(1, 1) = c.he(2, 1) = c.he(1, 2) = Rgb{20, 20, 20};
    const auto t = tissue_segmentation(c, no_background()).labels;
    const auto m = detect_mitosis(c.mitosis_candidates, c.he, t, {});
    CHECK(m.outcomes[0] == CandidateOutcome::accepted);
    CHECK(count_set(m.mask) == 3);
  }
}

TEST_CASE("mitosis: epithelial overlap is required") {
  TeacherBundle b = mitosis_field();
  b.tissue_logits.plane(cls::epithelial_tissue).fill(-1.0f);
  for (int y = 39; y <= 41; ++y) {
    for (int x = 39; x <= 41; ++x) b.he(x, y) = Rgb{20, 20, 20};
  }
  auto tissue = tissue_segmentation(b, no_background()).labels;
  auto m = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
  CHECK(m.outcomes[0] == CandidateOutcome::no_epithelial_overlap);
  CHECK(count_set(m.mask) == 0);

  // One epithelial pixel under the hull is enough.
  b.tissue_logits.plane(cls::epithelial_tissue)(41, 41) = 1.0f;
  tissue = tissue_segmentation(b, no_background()).labels;
  m = detect_mitosis(b.mitosis_candidates, b.he, tissue, {});
  CHECK(m.outcomes[0] == CandidateOutcome::accepted);
  CHECK(count_set(m.mask) == 9);

  // An epithelial pixel next to the hull but not under it is not.
  b.tissue_logits.plane(cls::epithelial_tissue)(41, 41) = -1.0f;
  b.tissue_logits.plane(cls::epithelial_tissue)(42, 42) = 1.0f;
  tissue = tissue_segmentation(b, no_background()).labels;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, {}).outcomes[0] ==
        CandidateOutcome::no_epithelial_overlap);
}

TEST_CASE("mitosis: score threshold") {
  TeacherBundle b = mitosis_field();
  b.he(40, 40) = b.he(41, 40) = b.he(40, 41) = Rgb{20, 20, 20};
  b.mitosis_candidates[0].score = 0.3;
  const auto tissue = tissue_segmentation(b, no_background()).labels;
  AggregatorConfig cfg;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] == CandidateOutcome::accepted);
  cfg.candidate_score_threshold = 0.5;
  CHECK(detect_mitosis(b.mitosis_candidates, b.he, tissue, cfg).outcomes[0] == CandidateOutcome::low_score);
}

TEST_CASE("apply_mitosis") {
  TeacherBundle b = mitosis_field();
  add_nucleus(b, 1, 38, 38, 4, 4);   // under the figure
  add_nucleus(b, 2, 44, 38, 2, 2);   // one pixel clear of it
  b.cell_logits.plane(cls::epithelial_tissue).fill(1.0f);
  for (int y = 38; y <= 42; ++y) {
    for (int x = 38; x <= 42; ++x) b.he(x, y) = Rgb{20, 20, 20};
  }
  const auto r = aggregate(b, no_background());
  CHECK(r.class_of(1) == cls::mitotic_cell);
  CHECK(r.decisions.at(1).mitotic);
  CHECK(r.mitosis.mask(42, 42) == 1);
  CHECK(r.mitosis.mask(43, 42) == 0);
  CHECK(r.class_of(2) == cls::epithelial_cell_nucleus);

  // Empty mask is the identity.
  auto decisions = r.decisions;
  for (auto& [id, d] : decisions) {
    d.mitotic = false;
    d.final_class = cls::lymphocyte;
  }
  auto copy = decisions;
  apply_mitosis(b.nuclei.pixel_lists(), BitMask(81, 81, 0), copy);
  for (const auto& [id, d] : copy) CHECK(d.final_class == cls::lymphocyte);
}

TEST_CASE("aggregate on an empty bundle is background and stroma only") {
  TeacherBundle b = blank(30, 30);
  for (int y = 0; y < 30; ++y) {
    for (int x = 15; x < 30; ++x) b.he(x, y) = Rgb{240, 240, 240};
  }
  const auto r = aggregate(b);
  for (ClassId c : r.semantic.pixels()) CHECK((c == cls::background || c == cls::stroma));
  CHECK(r.decisions.empty());
}

TEST_CASE("aggregate: candidate order does not change the mask") {
  for (std::uint64_t seed = 7; seed < 27; ++seed) {
    testkit::Scene s = testkit::random_scene(seed, {48, 96, 12, 5});
    TeacherBundle b = testkit::render_scene(s);
    const auto r1 = aggregate(b);
    std::reverse(b.mitosis_candidates.begin(), b.mitosis_candidates.end());
    const auto r2 = aggregate(b);
    CHECK(r1.mitosis.mask == r2.mitosis.mask);
    CHECK(r1.semantic == r2.semantic);
    CHECK(r1.mitosis.regions == r2.mitosis.regions);
  }
}

TEST_CASE("aggregate invariants on random scenes") {
  for (std::uint64_t seed = 300; seed < 340; ++seed) {
    CAPTURE(seed);
    const TeacherBundle b = testkit::render_scene(testkit::random_scene(seed));
    const auto r = aggregate(b);
    const auto px = b.nuclei.pixel_lists();

    // Tissue partition.
    for (ClassId c : r.tissue.pixels()) {
      CHECK((c == cls::background || c == cls::stroma || c == cls::smooth_muscle || c == cls::epithelial_tissue ||
             c == cls::red_blood_cell));
    }
    for (const auto& [id, d] : r.decisions) {
      bool hits = false;
      for (auto p : px.at(id)) {
        hits = hits || r.mitosis.mask[p];
        if (d.final_class) CHECK(r.semantic[p] == *d.final_class);
        if (!d.final_class) CHECK(r.semantic[p] == r.tissue[p]);
      }
      // Mitosis supersedence, both directions.
      CHECK(hits == (d.final_class == cls::mitotic_cell));
      CHECK((d.final_class != cls::leukocyte || d.hierarchy.cls == cls::leukocyte));
    }
    for (std::size_t i = 0; i < r.semantic.size(); ++i) {
      if (b.nuclei.ids[i] == 0) CHECK(r.semantic[i] == r.tissue[i]);
    }

    // Deterministic and worker independent.
    AggregatorConfig cfg;
    cfg.workers = 4;
    const auto r4 = aggregate(b, cfg);
    CHECK(r4.semantic == r.semantic);
    CHECK(r4.mitosis.regions == r.mitosis.regions);
  }
}

TEST_CASE("hierarchy properties on random nuclei") {
  Rng rng(2024);
  const auto& tax = Taxonomy::builtin();
  for (int t = 0; t < 500; ++t) {
    const int n = rng.range(1, 12);
    LogitStack s(n, 1, cell_channels());
    for (std::size_t c = 0; c < s.channels().size(); ++c) {
      for (auto& v : s.plane_at(c).pixels()) v = static_cast<float>(rng.range(-4, 4)) * 0.5f;
    }
    const auto px = all_pixels(n);
    const auto base = classify_nucleus(px, s, tax);

    // Positive scaling keeps the class.
    LogitStack scaled = s;
    const float k = static_cast<float>(rng.pick(std::vector<double>{0.25, 0.5, 2.0, 3.0, 8.0}));
    for (std::size_t c = 0; c < s.channels().size(); ++c) {
      for (auto& v : scaled.plane_at(c).pixels()) v *= k;
    }
    CHECK(classify_nucleus(px, scaled, tax).cls == base.cls);

    // Raising one level-4 class above everything on every pixel forces it.
    const ClassId top = rng.pick(std::vector<ClassId>{cls::eosinophil, cls::neutrophil});
    LogitStack raised = s;
    raised.plane(top).fill(10.0f);
    CHECK(classify_nucleus(px, raised, tax).cls == top);

    // All non-positive gives undefined.
    LogitStack neg = s;
    for (std::size_t c = 0; c < s.channels().size(); ++c) {
      for (auto& v : neg.plane_at(c).pixels()) v = -std::abs(v);
    }
    CHECK_FALSE(classify_nucleus(px, neg, tax).cls.has_value());
  }
}
