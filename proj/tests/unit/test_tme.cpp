#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "tmeseg/tme.hpp"
#include "tmeseg/testkit/synth.hpp"

using namespace tmeseg;
using tmeseg::testkit::Rng;

namespace {

void square(LabelRaster& m, int x0, int y0, int s, ClassId c) {
  for (int y = y0; y < y0 + s; ++y) {
    for (int x = x0; x < x0 + s; ++x) m(x, y) = c;
  }
}

const GroupMetrics& group(const SlideMetrics& m, const std::string& name) {
  for (const auto& g : m.groups) {
    if (g.name == name) return g;
  }
  FAIL("missing group " << name);
  return m.groups.front();
}

// Two-sided permutation p-value by enumerating every split of the pooled
// sample, using midranks for ties.
double enumerate_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  const std::size_t n = pool.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (double v : pool) {
      less += v < pool[i];
      equal += v == pool[i];
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  const double na = static_cast<double>(a.size());
  const double mu = na * static_cast<double>(b.size()) / 2.0;
  auto u_of = [&](std::uint32_t bits) {
    double r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (bits >> i & 1u) r += rank[i];
    }
    return r - na * (na + 1) / 2;
  };
  const double observed = std::fabs(u_of((1u << a.size()) - 1) - mu);
  std::size_t hits = 0, total = 0;
  for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
    if (static_cast<std::size_t>(std::popcount(bits)) != a.size()) continue;
    ++total;
    hits += std::fabs(u_of(bits) - mu) >= observed - 1e-9;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<CaseRecord> cohort(Rng& rng, int n, double shift, int metrics = 1) {
  std::vector<CaseRecord> cases;
  for (int i = 0; i < n; ++i) {
    CaseRecord c;
    c.case_id = "case" + std::to_string(i);
    const bool mut = i % 2 == 0;
    c.mutated["POLE"] = mut;
    for (int k = 0; k < metrics; ++k) {
      c.metrics["m" + std::to_string(k)] = rng.uniform() + (mut ? shift : 0.0);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace

TEST_CASE("in-tumour ratio by hand count") {
  LabelRaster m(120, 40, cls::epithelial_tissue);
  for (int i = 0; i < 10; ++i) square(m, 2 + i * 11, 4, 4, cls::epithelial_cell_nucleus);
  for (int i = 0; i < 5; ++i) square(m, 2 + i * 11, 20, 3, cls::lymphocyte);
  const auto s = slide_metrics(m, 0.5);
  CHECK(s.tumor_cell_count == 10);
  CHECK(group(s, "lymphocyte").count == 5);
  CHECK(group(s, "lymphocyte").in_tumor_ratio == doctest::Approx(0.5));
  CHECK(group(s, "all_leukocytes").in_tumor_ratio == doctest::Approx(0.5));
  CHECK(group(s, "plasma_cell").in_tumor_ratio == 0.0);
  CHECK(s.band_area_px == 45);  // only the lymphocyte pixels lie outside the tumour
}

TEST_CASE("no tumour gives not-applicable ratios") {
  LabelRaster m(30, 30, cls::stroma);
  square(m, 5, 5, 3, cls::lymphocyte);
  const auto s = slide_metrics(m, 0.5);
  CHECK(s.tumor_cell_count == 0);
  for (const auto& g : s.groups) {
    CHECK_FALSE(g.in_tumor_ratio.has_value());
    CHECK_FALSE(g.peripheral_ratio.has_value());
  }
  const auto doc = to_json(s);
  CHECK(doc.dump().find("null") != std::string::npos);
  CHECK(doc.dump().find("inf") == std::string::npos);
  CHECK_THROWS_AS(slide_metrics(m, 0.0), Error);
}

TEST_CASE("peripheral density in the margin annulus") {
  // Tumour disc of radius 40 px at 1 um/px; 50 um margin band is the
  // annulus 40 < r <= 90.
  const int size = 220, c = 110, r = 40;
  LabelRaster m(size, size, cls::stroma);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if ((x - c) * (x - c) + (y - c) * (y - c) <= r * r) m(x, y) = cls::epithelial_tissue;
    }
  }
  for (int i = 0; i < 4; ++i) square(m, c - 20 + i * 10, c, 3, cls::epithelial_cell_nucleus);
  const int k = 12;
  for (int i = 0; i < k; ++i) {
    const double a = 2.0 * std::numbers::pi * i / k;
    square(m, c + static_cast<int>(std::lround(65 * std::cos(a))) - 1,
           c + static_cast<int>(std::lround(65 * std::sin(a))) - 1, 3, cls::lymphocyte);
  }
  square(m, 2, 2, 3, cls::lymphocyte);  // far outside the band
  const auto s = slide_metrics(m, 1.0, 50.0);
  const auto& lym = group(s, "lymphocyte");
  CHECK(lym.count == k + 1);
  CHECK(lym.band_count == k);
  const double annulus_mm2 = std::numbers::pi * (90.0 * 90.0 - 40.0 * 40.0) / 1e6;
  REQUIRE(lym.band_density_mm2.has_value());
  CHECK(std::abs(*lym.band_density_mm2 - k / annulus_mm2) / (k / annulus_mm2) < 0.05);
  CHECK(lym.peripheral_ratio == doctest::Approx(*lym.band_density_mm2 / 4.0));

  // A narrower margin never adds peripheral cells.
  std::uint64_t last = lym.band_count;
  for (double margin : {40.0, 30.0, 20.0, 10.0}) {
    const auto g = group(slide_metrics(m, 1.0, margin), "lymphocyte").band_count;
    CHECK(g <= last);
    last = g;
  }
}

TEST_CASE("slide metrics are invariant under translation and rotation") {
  Rng rng(21);
  LabelRaster m(64, 48, cls::stroma);
  square(m, 20, 15, 20, cls::epithelial_tissue);
  for (int i = 0; i < 6; ++i) square(m, 22 + (i % 3) * 6, 17 + (i / 3) * 8, 3, cls::epithelial_cell_nucleus);
  for (int i = 0; i < 10; ++i) {
    square(m, rng.range(0, 60), rng.range(0, 44), 2, rng.chance(0.5) ? cls::lymphocyte : cls::fibroblast);
  }
  LabelRaster shifted(80, 60, cls::stroma), rotated(48, 64);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) {
      shifted(x + 9, y + 7) = m(x, y);
      rotated(47 - y, x) = m(x, y);
    }
  }
  const auto a = flatten(slide_metrics(m, 0.5, 5.0));
  const auto b = flatten(slide_metrics(shifted, 0.5, 5.0));
  const auto c = flatten(slide_metrics(rotated, 0.5, 5.0));
  for (const auto& [name, v] : a) {
    CAPTURE(name);
    CHECK(b.at(name).has_value() == v.has_value());
    CHECK(c.at(name).has_value() == v.has_value());
    if (v) {
      CHECK(*b.at(name) == doctest::Approx(*v));
      CHECK(*c.at(name) == doctest::Approx(*v));
    }
  }
}

TEST_CASE("Mann-Whitney examples") {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  const auto r = mann_whitney_u(a, b);
  CHECK(r.u == 0.0);
  CHECK(r.exact);
  CHECK(r.p_value == doctest::Approx(0.1));
  CHECK(mann_whitney_u(b, a).u == 9.0);

  std::vector<double> hi, lo;
  for (int i = 0; i < 30; ++i) {
    hi.push_back(100 + i);
    lo.push_back(i);
  }
  const auto big = mann_whitney_u(hi, lo);
  CHECK(big.u == 900.0);
  CHECK_FALSE(big.exact);
  CHECK(big.p_value < 1e-6);

  CHECK(mann_whitney_u(lo, lo).p_value == doctest::Approx(1.0));
  CHECK(mann_whitney_u(a, a).p_value == doctest::Approx(1.0));
  CHECK_THROWS_AS(mann_whitney_u(a, std::vector<double>{}), Error);
}

TEST_CASE("exact Mann-Whitney agrees with enumeration, ties included") {
  Rng rng(12);
  for (int t = 0; t < 150; ++t) {
    std::vector<double> a(static_cast<std::size_t>(rng.range(1, 6))), b(static_cast<std::size_t>(rng.range(1, 7)));
    for (auto& v : a) v = rng.range(0, 6);
    for (auto& v : b) v = rng.range(0, 6);
    const auto r = mann_whitney_u(a, b);
    REQUIRE(r.exact);
    CHECK(r.p_value == doctest::Approx(enumerate_p(a, b)));
    CHECK(r.u + mann_whitney_u(b, a).u == doctest::Approx(static_cast<double>(a.size() * b.size())));
  }
}

TEST_CASE("association table") {
  Rng rng(31);
  const std::vector<std::string> genes{"POLE"};

  SUBCASE("planted signal") {
    const auto cases = cohort(rng, 40, 10.0);
    const auto t = association_table(cases, genes);
    REQUIRE(t.size() == 1);
    CHECK(t[0].test->p_value < 0.001);
    CHECK(t[0].direction == "enriched");
    CHECK(t[0].n_mutated == 20);

    auto shuffled = cases;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[3], shuffled[17]);
    const auto t2 = association_table(shuffled, genes);
    CHECK(t2[0].test->u == t[0].test->u);
    CHECK(t2[0].test->p_value == t[0].test->p_value);
    CHECK(to_csv(t2) == to_csv(t));
  }
  SUBCASE("single mutated case is insufficient") {
    auto cases = cohort(rng, 10, 0.0);
    for (std::size_t i = 2; i < cases.size(); ++i) cases[i].mutated["POLE"] = false;
    cases[0].mutated["POLE"] = false;
    const auto t = association_table(cases, genes);
    CHECK(t[0].status == AssociationStatus::insufficient_n);
    CHECK_FALSE(t[0].test.has_value());
    CHECK(to_json(t)["rows"][0]["status"] == "insufficient_n");
  }
  SUBCASE("shuffled labels reject at the nominal rate") {
    std::size_t rejected = 0, total = 0;
    for (int shuffle = 0; shuffle < 100; ++shuffle) {
      auto cases = cohort(rng, 60, 0.0, 10);
      for (auto& c : cases) c.mutated["POLE"] = rng.chance(0.5);
      for (const auto& cell : association_table(cases, genes)) {
        if (!cell.test) continue;
        ++total;
        rejected += cell.test->p_value < 0.05;
      }
    }
    const double rate = static_cast<double>(rejected) / static_cast<double>(total);
    CHECK(rate == doctest::Approx(0.05).epsilon(0.6));
    CHECK(std::abs(rate - 0.05) <= 0.03);
  }
}

TEST_CASE("case means over slides") {
  SlideMetrics s1, s2;
  s1.groups.push_back({"lymphocyte", 0, 0, 0.2, std::nullopt, std::nullopt});
  s2.groups.push_back({"lymphocyte", 0, 0, 0.4, std::nullopt, 1.0});
  const std::vector<SlideMetrics> slides{s1, s2};
  const auto c = make_case("A", slides, {{"TP53", true}});
  CHECK(*c.metrics.at("in_tumor.lymphocyte") == doctest::Approx(0.3));
  CHECK(*c.metrics.at("peripheral.lymphocyte") == doctest::Approx(1.0));
}
