#include <doctest.h>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/io.hpp"
#include "tmeseg/testkit/reference.hpp"
#include "tmeseg/testkit/synth.hpp"

using namespace tmeseg;
using namespace tmeseg::testkit;

namespace {

Scene three_nuclei() {
  Scene s;
  s.width = 48;
  s.height = 40;
  s.seed = 7;
  s.tissue_region = {24, 20, 30, 30};
  s.tissue.push_back({{24, 20, 12, 10}, cls::epithelial_tissue, 2.0f});
  for (int i = 0; i < 3; ++i) {
    NucleusSpec n;
    n.shape = {8.0 + 14 * i, 20, 3, 3};
    n.targets[1] = cls::leukocyte;
    n.targets[2] = cls::lymphocyte;
    n.magnitude = 2.0f;
    s.nuclei.push_back(n);
  }
  return s;
}

}  // namespace

TEST_CASE("seeded fixtures are byte-identical on repeated calls") {
  const Scene s = three_nuclei();
  const auto a = encode_records(bundle_records(render_scene(s)));
  const auto b = encode_records(bundle_records(render_scene(s)));
  CHECK(a == b);
  CHECK(encode_records(bundle_records(render_scene(random_scene(42)))) ==
        encode_records(bundle_records(render_scene(random_scene(42)))));
}

TEST_CASE("a single lymphocyte scene is labelled lymphocyte by the reference") {
  Scene s;
  s.width = 32;
  s.height = 32;
  s.seed = 1;
  s.tissue_region = {16, 16, 14, 14};
  NucleusSpec n;
  n.shape = {16, 16, 4, 4};
  n.targets[1] = cls::leukocyte;
  n.targets[2] = cls::lymphocyte;
  n.magnitude = 2.0f;
  s.nuclei.push_back(n);
  const Fixture f = synth_fixture(s);
  REQUIRE(f.truth.classes.size() == 1);
  CHECK(f.truth.classes.at(1) == cls::lymphocyte);
  for (std::size_t i = 0; i < f.bundle.nuclei.ids.size(); ++i) {
    if (f.bundle.nuclei.ids[i] == 1) CHECK(f.truth.semantic[i] == cls::lymphocyte);
  }
}

TEST_CASE("overlapping nuclei are rejected") {
  Scene s = three_nuclei();
  s.nuclei[1].shape = s.nuclei[0].shape;
  CHECK_THROWS_AS(render_scene(s), Error);
}

TEST_CASE("random scenes stay within the limits and never overlap") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = random_scene(seed);
    CHECK(s.width <= 128);
    CHECK(s.height <= 128);
    CHECK(s.nuclei.size() <= 20);
    CHECK(s.candidates.size() <= 5);
    CHECK_NOTHROW(render_scene(s));
  }
}

TEST_CASE("reference building blocks agree with the library kernels") {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int w = rng.range(1, 24), h = rng.range(1, 24);
    BitMask m(w, h, 0);
    for (auto& v : m.pixels()) v = rng.chance(0.45) ? 1 : 0;
    for (int conn : {4, 8}) {
      const auto a = connected_components(m, static_cast<Connectivity>(conn));
      CHECK(a.ids == reference_components(m, conn));
    }
    CHECK(fill_holes(m) == reference_fill_holes(m));

    std::vector<Point> pts;
    const int n = rng.range(1, 12);
    for (int i = 0; i < n; ++i) pts.push_back({rng.range(0, w - 1), rng.range(0, h - 1)});
    CHECK(rasterize_hull(convex_hull(pts), w, h) == reference_hull_fill(pts, w, h));

    RgbTile img(w, h);
    for (auto& p : img.pixels()) p = Rgb{static_cast<std::uint8_t>(rng.range(0, 255)),
                                         static_cast<std::uint8_t>(rng.range(0, 255)),
                                         static_cast<std::uint8_t>(rng.range(0, 255))};
    const double sigma = rng.uniform(0.3, 3.0);
    CHECK(gaussian_smooth(img, sigma) == reference_smooth(img, sigma));
  }
}

TEST_CASE("aggregate matches the reference on seeded scenes") {
  for (std::uint64_t seed = 1000; seed < 1040; ++seed) {
    CAPTURE(seed);
    const Fixture f = synth_fixture(random_scene(seed));
    const AggregationResult r = aggregate(f.bundle);
    CHECK(r.background_threshold == f.truth.background_threshold);
    CHECK(r.tissue == f.truth.tissue);
    CHECK(r.mitosis.mask == f.truth.mitosis_mask);
    CHECK(r.semantic == f.truth.semantic);
    for (const auto& [id, c] : f.truth.classes) CHECK(r.class_of(id) == c);
  }
}
