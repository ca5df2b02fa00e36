#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tmeseg/raster.hpp"
#include "tmeseg/testkit/reference.hpp"
#include "tmeseg/testkit/synth.hpp"

using namespace tmeseg;
using tmeseg::testkit::Rng;

namespace {

BitMask random_mask(Rng& rng, int w, int h, double p) {
  BitMask m(w, h, 0);
  for (auto& v : m.pixels()) v = rng.chance(p) ? 1 : 0;
  return m;
}

BitMask disc(int w, int h, double cx, double cy, double r) {
  BitMask m(w, h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m(x, y) = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r ? 1 : 0;
  }
  return m;
}

BitMask transpose(const BitMask& m) {
  BitMask t(m.height(), m.width(), 0);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) t(y, x) = m(x, y);
  }
  return t;
}

// Plain union-find over 8- or 4-neighbours.
std::size_t union_find_count(const BitMask& m, int conn) {
  std::vector<std::size_t> parent(m.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(x, y)) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dx == 0 && dy == 0) || (conn == 4 && dx != 0 && dy != 0)) continue;
          if (!m.contains(x + dx, y + dy) || !m(x + dx, y + dy)) continue;
          parent[find(m.index(x, y))] = find(m.index(x + dx, y + dy));
        }
      }
    }
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) n += (m[i] && find(i) == i) ? 1 : 0;
  return n;
}

double polygon_area2(const std::vector<Point>& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point& u = p[i];
    const Point& v = p[(i + 1) % p.size()];
    a += static_cast<double>(u.x) * v.y - static_cast<double>(v.x) * u.y;
  }
  return a;
}

}  // namespace

TEST_CASE("gaussian_smooth of a constant tile is the same tile") {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    const Rgb c{static_cast<std::uint8_t>(rng.range(0, 255)), static_cast<std::uint8_t>(rng.range(0, 255)),
                static_cast<std::uint8_t>(rng.range(0, 255))};
    const RgbTile img(rng.range(1, 40), rng.range(1, 40), c);
    CHECK(gaussian_smooth(img, rng.uniform(0.2, 6.0)) == img);
  }
}

TEST_CASE("gaussian_smooth single bright pixel matches the direct convolution weight") {
  RgbTile img(31, 31, Rgb{0, 0, 0});
  img(15, 15) = Rgb{255, 255, 255};
  const RgbTile out = gaussian_smooth(img, 1.0);
  double s = 0;
  for (int i = -3; i <= 3; ++i) s += std::exp(-i * i / 2.0);
  const auto expected = static_cast<int>(std::lround(255.0 / (s * s)));
  CHECK(out(15, 15).r == expected);
  CHECK(expected == 41);
  CHECK(out == testkit::reference_smooth(img, 1.0));
}

TEST_CASE("gaussian_smooth rejects bad sigma and is worker independent") {
  const RgbTile img(8, 8, Rgb{1, 2, 3});
  CHECK_THROWS_AS(gaussian_smooth(img, 0.0), Error);
  CHECK_THROWS_AS(gaussian_smooth(img, -1.0), Error);
  CHECK_THROWS_AS(gaussian_smooth(img, NAN), Error);

  Rng rng(5);
  RgbTile big(150, 200);
  for (auto& p : big.pixels()) p = Rgb{static_cast<std::uint8_t>(rng.range(0, 255)), 7, 9};
  const RgbTile one = gaussian_smooth(big, 2.0, 1);
  CHECK(gaussian_smooth(big, 2.0, 3) == one);
  CHECK(gaussian_smooth(big, 2.0, 8) == one);
  CHECK(one == testkit::reference_smooth(big, 2.0));
}

TEST_CASE("reflect101") {
  CHECK(reflect101(-1, 5) == 1);
  CHECK(reflect101(-2, 5) == 2);
  CHECK(reflect101(5, 5) == 3);
  CHECK(reflect101(6, 5) == 2);
  CHECK(reflect101(-7, 3) == 1);
  CHECK(reflect101(4, 1) == 0);
}

TEST_CASE("otsu_threshold examples") {
  GrayRaster two(10, 2);
  for (int x = 0; x < 10; ++x) {
    two(x, 0) = 50;
    two(x, 1) = 200;
  }
  CHECK(otsu_threshold(two) == 50);
  CHECK(otsu_threshold(GrayRaster(7, 7, 128)) == 128);
  CHECK(otsu_threshold(GrayRaster(1, 1, 0)) == 0);
  CHECK(otsu_threshold(GrayRaster(3, 1, 255)) == 255);
  CHECK_THROWS_AS(otsu_threshold(Histogram{}), Error);
}

TEST_CASE("otsu_threshold matches the exhaustive rational maximiser") {
  Rng rng(99);
  for (int t = 0; t < 200; ++t) {
    Histogram h{};
    const int mode = rng.range(0, 3);
    if (mode == 0) {
      for (auto& v : h) v = static_cast<std::uint64_t>(rng.range(0, 1000));
    } else if (mode == 1) {
      // Sparse: a handful of occupied bins, so ties are common.
      for (int k = rng.range(1, 5); k > 0; --k) h[static_cast<std::size_t>(rng.range(0, 255))] += rng.range(1, 4);
    } else {
      // Bimodal mixture.
      const double m1 = rng.uniform(20, 120), m2 = rng.uniform(130, 240);
      for (int i = 0; i < 256; ++i) {
        const double a = std::exp(-(i - m1) * (i - m1) / 200.0), b = std::exp(-(i - m2) * (i - m2) / 300.0);
        h[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(5000 * a + 3000 * b);
      }
      h[static_cast<std::size_t>(rng.range(0, 255))] += 1;
    }
    CAPTURE(t);
    CHECK(otsu_threshold(h) == testkit::reference_otsu(h));
  }
}

TEST_CASE("connected_components") {
  CHECK(connected_components(BitMask(5, 5, 0)).count() == 0);

  BitMask diag(2, 2, 0);
  diag(0, 0) = 1;
  diag(1, 1) = 1;
  CHECK(connected_components(diag, Connectivity::eight).count() == 1);
  CHECK(connected_components(diag, Connectivity::four).count() == 2);

  BitMask m(4, 3, 0);
  m(3, 0) = 1;
  m(0, 2) = 1;
  m(1, 2) = 1;
  const auto cc = connected_components(m);
  CHECK(cc.ids(3, 0) == 1);  // first in raster order
  CHECK(cc.ids(0, 2) == 2);
  CHECK(cc.attrs.at(2).pixel_count == 2);
  CHECK(cc.attrs.at(2).cx == doctest::Approx(0.5));
  CHECK(cc.attrs.at(2).cy == doctest::Approx(2.0));
}

TEST_CASE("connected_components count matches union-find and survives transposition") {
  Rng rng(64);
  for (int t = 0; t < 30; ++t) {
    const BitMask m = random_mask(rng, 64, 64, rng.uniform(0.2, 0.7));
    for (auto conn : {Connectivity::four, Connectivity::eight}) {
      const auto n = connected_components(m, conn).count();
      CHECK(n == union_find_count(m, static_cast<int>(conn)));
      CHECK(connected_components(transpose(m), conn).count() == n);
    }
  }
}

TEST_CASE("convex hull examples") {
  const std::vector<Point> square = {{0, 0}, {4, 0}, {4, 4}, {0, 4}, {2, 2}, {2, 0}};
  const auto hull = convex_hull(square);
  CHECK(hull.size() == 4);
  CHECK(polygon_area2(hull) == 32.0);  // counter-clockwise, area 16
  const auto filled = rasterize_hull(hull, 6, 6);
  CHECK(count_set(filled) == 25);
  CHECK(filled(4, 4) == 1);
  CHECK(filled(5, 5) == 0);

  const auto seg = convex_hull({{0, 0}, {1, 1}, {2, 2}, {3, 3}});
  REQUIRE(seg.size() == 2);
  CHECK(count_set(rasterize_hull(seg, 5, 5)) == 4);

  const auto dot = convex_hull({{2, 3}, {2, 3}});
  CHECK(dot.size() == 1);
  CHECK(count_set(rasterize_hull(dot, 5, 5)) == 1);
}

TEST_CASE("convex hull contains its points, dominates triangles and is idempotent") {
  Rng rng(50);
  for (int t = 0; t < 20; ++t) {
    std::vector<Point> pts;
    for (int i = 0; i < 50; ++i) pts.push_back({rng.range(0, 39), rng.range(0, 39)});
    const auto hull = convex_hull(pts);
    const auto mask = rasterize_hull(hull, 40, 40);
    for (const Point& p : pts) CHECK(mask(p.x, p.y) == 1);
    const double area2 = polygon_area2(hull);
    CHECK(area2 > 0);
    for (int k = 0; k < 200; ++k) {
      const Point& a = pts[static_cast<std::size_t>(rng.range(0, 49))];
      const Point& b = pts[static_cast<std::size_t>(rng.range(0, 49))];
      const Point& c = pts[static_cast<std::size_t>(rng.range(0, 49))];
      CHECK(std::abs(polygon_area2({a, b, c})) <= area2);
    }
    CHECK(convex_hull(hull) == hull);
    CHECK(mask == testkit::reference_hull_fill(pts, 40, 40));
  }
}

TEST_CASE("contours") {
  BitMask two(5, 5, 0);
  two(1, 1) = two(2, 1) = 1;
  auto cs = contours(two);
  REQUIRE(cs.size() == 1);
  CHECK(cs[0].area == 2);

  BitMask three(5, 5, 0);
  three(1, 1) = three(2, 1) = three(2, 2) = 1;
  cs = contours(three);
  REQUIRE(cs.size() == 1);
  CHECK(cs[0].area == 3);

  // A ring with a hole and a separate dot inside the hole: the hole is
  // filled, so one contour covering the whole 5x5 square.
  BitMask ring(9, 9, 0);
  for (int i = 2; i <= 6; ++i) ring(i, 2) = ring(i, 6) = ring(2, i) = ring(6, i) = 1;
  ring(4, 4) = 1;
  cs = contours(ring);
  REQUIRE(cs.size() == 1);
  CHECK(cs[0].area == 25);
  CHECK(connected_components(ring).count() == 2);
}

TEST_CASE("squared distance transform equals brute force") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const int w = rng.range(1, 30), h = rng.range(1, 30);
    const BitMask m = random_mask(rng, w, h, rng.uniform(0.01, 0.2));
    const auto d = squared_distance_transform(m);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double best = INFINITY;
        for (int v = 0; v < h; ++v) {
          for (int u = 0; u < w; ++u) {
            if (m(u, v)) best = std::min(best, static_cast<double>((x - u) * (x - u) + (y - v) * (y - v)));
          }
        }
        if (std::isinf(best)) {
          CHECK(d(x, y) >= 1e19);
        } else {
          CHECK(d(x, y) == best);
        }
      }
    }
  }
}

TEST_CASE("distance_band") {
  const BitMask region = disc(101, 101, 50, 50, 20);
  const BitMask band = distance_band(region, 10.0, 1.0);
  const double annulus = std::numbers::pi * (30.0 * 30.0 - 20.0 * 20.0);
  CHECK(std::abs(static_cast<double>(count_set(band)) - annulus) / annulus < 0.05);
  for (std::size_t i = 0; i < band.size(); ++i) {
    if (band[i]) CHECK(region[i] == 0);
  }
  CHECK(count_set(distance_band(BitMask(20, 20, 0), 5.0, 1.0)) == 0);
  CHECK(count_set(distance_band(BitMask(20, 20, 1), 5.0, 1.0)) == 0);
  CHECK_THROWS_AS(distance_band(region, 0.0, 1.0), Error);
  CHECK_THROWS_AS(distance_band(region, 5.0, 0.0), Error);

  // mpp scaling: 10 um at 0.5 um/px is 20 px.
  CHECK(distance_band(region, 10.0, 0.5) == distance_band(region, 20.0, 1.0));

  // Monotone in radius.
  Rng rng(8);
  const BitMask blobs = random_mask(rng, 60, 60, 0.02);
  BitMask prev = distance_band(blobs, 1.0, 1.0);
  for (double r : {2.0, 3.5, 5.0, 9.0}) {
    const BitMask next = distance_band(blobs, r, 1.0);
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (prev[i]) CHECK(next[i] == 1);
    }
    prev = next;
  }
}

TEST_CASE("instance map attributes and validation") {
  InstanceMap m(4, 4);
  m.ids(0, 0) = 3;
  m.ids(1, 0) = 3;
  m.ids(3, 3) = 9;
  m.attrs[3].teacher_type = NucleusType::connective;
  m.refresh_attrs();
  CHECK(m.count() == 2);
  CHECK(m.attrs.at(3).teacher_type == NucleusType::connective);
  CHECK(m.attrs.at(3).pixel_count == 2);
  CHECK(m.attrs.at(9).cx == 3.0);
  CHECK_NOTHROW(m.validate());
  m.attrs[5] = {};
  CHECK_THROWS_AS(m.validate(), Error);

  const auto px = InstanceMap(m).pixel_lists();
  CHECK(px.at(3) == std::vector<std::uint32_t>{0, 1});

  CHECK(parse_nucleus_type("connective") == NucleusType::connective);
  CHECK_THROWS_AS(parse_nucleus_type("osteoid"), Error);
}

TEST_CASE("logit stack validation") {
  LogitStack s(3, 3, {cls::stroma, cls::lymphocyte});
  CHECK_NOTHROW(s.validate());
  s.plane(cls::lymphocyte)(1, 1) = NAN;
  CHECK_THROWS_AS(s.validate(), Error);
  CHECK_THROWS_AS(LogitStack(2, 2, {cls::stroma, cls::stroma}), Error);
  const std::vector<ClassId> need{cls::eosinophil};
  CHECK_THROWS_AS(s.require(need, Taxonomy::builtin(), "cell logits"), Error);
}
