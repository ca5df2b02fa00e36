#include "tmeseg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <boost/multiprecision/cpp_int.hpp>

#include "tmeseg/parallel.hpp"

namespace tmeseg {

// ---------------------------------------------------------------------------
// LogitStack

LogitStack::LogitStack(int width, int height, std::vector<ClassId> channels)
    : width_(width), height_(height), channels_(std::move(channels)) {
  std::set<ClassId> seen(channels_.begin(), channels_.end());
  if (seen.size() != channels_.size()) throw data_error("logit stack: duplicate channel");
  planes_.assign(channels_.size(), Raster<float>(width, height, 0.0f));
}

std::optional<std::size_t> LogitStack::find(ClassId c) const {
  const auto it = std::find(channels_.begin(), channels_.end(), c);
  if (it == channels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - channels_.begin());
}

Raster<float>& LogitStack::plane(ClassId c) {
  const auto i = find(c);
  if (!i) throw data_error("logit stack: missing channel id " + std::to_string(c.value));
  return planes_[*i];
}

const Raster<float>& LogitStack::plane(ClassId c) const {
  const auto i = find(c);
  if (!i) throw data_error("logit stack: missing channel id " + std::to_string(c.value));
  return planes_[*i];
}

void LogitStack::validate() const {
  std::set<ClassId> seen(channels_.begin(), channels_.end());
  if (seen.size() != channels_.size()) throw data_error("logit stack: duplicate channel");
  for (std::size_t i = 0; i < planes_.size(); ++i) {
    if (!planes_[i].same_shape(width_, height_)) throw data_error("logit stack: plane size mismatch");
    for (float v : planes_[i].pixels()) {
      if (!std::isfinite(v)) {
        throw data_error("logit stack: non-finite value in channel id " + std::to_string(channels_[i].value));
      }
    }
  }
}

void LogitStack::require(std::span<const ClassId> needed, const Taxonomy& tax, const std::string& what) const {
  for (ClassId c : needed) {
    if (!has(c)) throw data_error(what + ": missing required channel '" + tax.name_of(c) + "'");
  }
}

LogitStack LogitStack::crop(int x0, int y0, int w, int h) const {
  LogitStack out;
  out.width_ = w;
  out.height_ = h;
  out.channels_ = channels_;
  for (const auto& p : planes_) out.planes_.push_back(p.crop(x0, y0, w, h));
  return out;
}

// ---------------------------------------------------------------------------
// InstanceMap

std::string to_string(NucleusType t) {
  switch (t) {
    case NucleusType::none: return "none";
    case NucleusType::neoplastic: return "neoplastic";
    case NucleusType::inflammatory: return "inflammatory";
    case NucleusType::connective: return "connective";
    case NucleusType::dead: return "dead";
    case NucleusType::epithelial: return "epithelial";
  }
  return "none";
}

NucleusType parse_nucleus_type(std::string_view s) {
  for (auto t : {NucleusType::none, NucleusType::neoplastic, NucleusType::inflammatory,
                 NucleusType::connective, NucleusType::dead, NucleusType::epithelial}) {
    if (to_string(t) == s) return t;
  }
  throw data_error("unknown nucleus type '" + std::string(s) + "'");
}

namespace {

struct Moments {
  std::uint64_t n = 0;
  double sx = 0.0;
  double sy = 0.0;
};

std::map<std::uint32_t, Moments> instance_moments(const IdRaster& ids) {
  std::map<std::uint32_t, Moments> m;
  std::uint32_t last_id = 0;
  Moments* last = nullptr;
  for (int y = 0; y < ids.height(); ++y) {
    const auto row = ids.row(y);
    for (int x = 0; x < ids.width(); ++x) {
      const std::uint32_t id = row[static_cast<std::size_t>(x)];
      if (id == 0) continue;
      if (id != last_id || last == nullptr) {
        last = &m[id];
        last_id = id;
      }
      ++last->n;
      last->sx += x;
      last->sy += y;
    }
  }
  return m;
}

}  // namespace

void InstanceMap::refresh_attrs() {
  const auto moments = instance_moments(ids);
  std::map<std::uint32_t, InstanceAttrs> fresh;
  for (const auto& [id, m] : moments) {
    InstanceAttrs a;
    if (auto it = attrs.find(id); it != attrs.end()) a.teacher_type = it->second.teacher_type;
    a.pixel_count = m.n;
    a.cx = m.sx / static_cast<double>(m.n);
    a.cy = m.sy / static_cast<double>(m.n);
    fresh.emplace(id, a);
  }
  attrs = std::move(fresh);
}

void InstanceMap::validate() const {
  if (attrs.contains(0)) throw data_error("instance map: id 0 must not carry attributes");
  const auto moments = instance_moments(ids);
  for (const auto& [id, m] : moments) {
    const auto it = attrs.find(id);
    if (it == attrs.end()) throw data_error("instance map: id " + std::to_string(id) + " has no attributes");
    if (it->second.pixel_count != m.n) {
      throw data_error("instance map: pixel count mismatch for id " + std::to_string(id));
    }
  }
  for (const auto& [id, a] : attrs) {
    if (!moments.contains(id)) throw data_error("instance map: id " + std::to_string(id) + " has no pixels");
  }
}

std::map<std::uint32_t, std::vector<std::uint32_t>> InstanceMap::pixel_lists() const {
  std::map<std::uint32_t, std::vector<std::uint32_t>> out;
  std::uint32_t last_id = 0;
  std::vector<std::uint32_t>* last = nullptr;
  const auto px = ids.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::uint32_t id = px[i];
    if (id == 0) continue;
    if (id != last_id || last == nullptr) {
      last = &out[id];
      last_id = id;
    }
    last->push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

InstanceMap InstanceMap::crop(int x0, int y0, int w, int h) const {
  InstanceMap out;
  out.ids = ids.crop(x0, y0, w, h);
  out.attrs = attrs;
  out.refresh_attrs();
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian smoothing

std::vector<std::int64_t> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw usage_error("gaussian sigma must be positive");
  if (sigma > 100.0) throw usage_error("gaussian sigma must be <= 100 px");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<std::int64_t> k(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) {
    const double g = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = std::llround(65536.0 * g);
  }
  return k;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

RgbTile gaussian_smooth(const RgbTile& img, double sigma, int workers) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const std::int64_t ksum = std::accumulate(k.begin(), k.end(), std::int64_t{0});
  const std::int64_t norm = ksum * ksum;
  const int w = img.width();
  const int h = img.height();
  if (w < 1 || h < 1) throw usage_error("gaussian_smooth: empty tile");

  std::vector<int> xs(static_cast<std::size_t>(w + 2 * radius));
  for (int x = -radius; x < w + radius; ++x) xs[static_cast<std::size_t>(x + radius)] = reflect101(x, w);
  const auto round_div = [norm](std::int64_t v) {
    return static_cast<std::uint8_t>(std::min<std::int64_t>(255, (v + norm / 2) / norm));
  };
  const auto uw = static_cast<std::size_t>(w);
  const std::size_t taps = k.size();

  // Row blocks: horizontal pass into an exact int64 strip with a reflected
  // apron, then the vertical pass for the block's output rows.
  constexpr int kBlock = 64;
  const auto blocks = static_cast<std::size_t>((h + kBlock - 1) / kBlock);
  RgbTile out(w, h);
  parallel_for(blocks, workers, [&](std::size_t b0, std::size_t b1) {
    std::vector<std::array<std::int64_t, 3>> strip;
    for (std::size_t blk = b0; blk < b1; ++blk) {
      const int y0 = static_cast<int>(blk) * kBlock;
      const int y1 = std::min(h, y0 + kBlock);
      const auto rows = static_cast<std::size_t>(y1 - y0 + 2 * radius);
      strip.resize(rows * uw);
      for (std::size_t j = 0; j < rows; ++j) {
        const auto src = img.row(reflect101(y0 - radius + static_cast<int>(j), h));
        auto* dst = strip.data() + j * uw;
        for (std::size_t x = 0; x < uw; ++x) {
          std::int64_t r = 0, g = 0, b = 0;
          for (std::size_t i = 0; i < taps; ++i) {
            const Rgb p = src[static_cast<std::size_t>(xs[x + i])];
            const std::int64_t kk = k[i];
            r += kk * p.r;
            g += kk * p.g;
            b += kk * p.b;
          }
          dst[x] = {r, g, b};
        }
      }
      for (int y = y0; y < y1; ++y) {
        auto orow = out.row(y);
        const auto base = static_cast<std::size_t>(y - y0);
        for (std::size_t x = 0; x < uw; ++x) {
          std::int64_t r = 0, g = 0, b = 0;
          for (std::size_t j = 0; j < taps; ++j) {
            const auto& t = strip[(base + j) * uw + x];
            const std::int64_t kk = k[j];
            r += kk * t[0];
            g += kk * t[1];
            b += kk * t[2];
          }
          orow[x] = Rgb{round_div(r), round_div(g), round_div(b)};
        }
      }
    }
  });
  return out;
}

GrayRaster to_gray(const RgbTile& img) {
  GrayRaster g(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) g[i] = gray_of(img[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Otsu

std::uint8_t otsu_threshold(const Histogram& hist) {
  using boost::multiprecision::int256_t;
  std::int64_t total = 0;
  std::int64_t total_sum = 0;
  int occupied = 0;
  int only = 0;
  for (int i = 0; i < 256; ++i) {
    const auto h = static_cast<std::int64_t>(hist[static_cast<std::size_t>(i)]);
    total += h;
    total_sum += h * i;
    if (h > 0) {
      ++occupied;
      only = i;
    }
  }
  if (total == 0) throw usage_error("otsu_threshold: empty histogram");
  if (occupied == 1) return static_cast<std::uint8_t>(only);

  // Between-class variance for split t is proportional to
  // (N*S0 - n0*S)^2 / (n0*n1); compared by exact cross-multiplication.
  int best_t = -1;
  int256_t best_num = 0;
  int256_t best_den = 1;
  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  for (int t = 0; t < 255; ++t) {
    const auto h = static_cast<std::int64_t>(hist[static_cast<std::size_t>(t)]);
    n0 += h;
    s0 += h * t;
    const std::int64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const int256_t d = int256_t(total) * s0 - int256_t(n0) * total_sum;
    const int256_t num = d * d;
    const int256_t den = int256_t(n0) * n1;
    if (best_t < 0 || num * best_den > best_num * den) {
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  return static_cast<std::uint8_t>(best_t);
}

std::uint8_t otsu_threshold(const GrayRaster& gray) {
  Histogram hist{};
  for (auto v : gray.pixels()) ++hist[v];
  return otsu_threshold(hist);
}

// ---------------------------------------------------------------------------
// Connected components

namespace {

struct DisjointSet {
  std::vector<std::uint32_t> parent;

  std::uint32_t make() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a < b) {
      parent[b] = a;
    } else if (b < a) {
      parent[a] = b;
    }
  }
};

}  // namespace

InstanceMap connected_components(const BitMask& mask, Connectivity conn) {
  const int w = mask.width();
  const int h = mask.height();
  IdRaster provisional(w, h, 0u);
  DisjointSet ds;
  ds.make();  // slot 0 = no label
  const bool eight = conn == Connectivity::eight;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(x, y)) continue;
      std::uint32_t label = 0;
      const auto take = [&](int nx, int ny) {
        if (!mask.contains(nx, ny)) return;
        const std::uint32_t l = provisional(nx, ny);
        if (l == 0) return;
        if (label == 0) {
          label = l;
        } else {
          ds.unite(label, l);
        }
      };
      take(x - 1, y);
      take(x, y - 1);
      if (eight) {
        take(x - 1, y - 1);
        take(x + 1, y - 1);
      }
      provisional(x, y) = label != 0 ? label : ds.make();
    }
  }

  InstanceMap out(w, h);
  std::vector<std::uint32_t> final_id(ds.parent.size(), 0);
  std::uint32_t next = 1;
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    const std::uint32_t l = provisional[i];
    if (l == 0) continue;
    const std::uint32_t root = ds.find(l);
    if (final_id[root] == 0) final_id[root] = next++;
    out.ids[i] = final_id[root];
  }
  out.refresh_attrs();
  return out;
}

// ---------------------------------------------------------------------------
// Convex hull

namespace {

std::int64_t cross(Point o, Point a, Point b) {
  return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) - static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point> convex_hull(std::vector<Point> points) {
  if (points.empty()) throw usage_error("convex_hull: no points");
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() <= 2) return points;

  std::vector<Point> hull(2 * points.size());
  std::size_t k = 0;
  for (const Point& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = points.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  // Fully collinear input collapses to the two extreme points.
  if (hull.size() == 2 && hull[0] == hull[1]) hull.pop_back();
  return hull;
}

BitMask rasterize_hull(std::span<const Point> hull, int width, int height) {
  BitMask out(width, height, 0);
  if (hull.empty()) return out;
  int x0 = hull[0].x, x1 = hull[0].x, y0 = hull[0].y, y1 = hull[0].y;
  for (const Point& p : hull) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, width - 1);
  y1 = std::min(y1, height - 1);
  const std::size_t n = hull.size();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Point p{x, y};
      bool inside = true;
      if (n == 1) {
        inside = p == hull[0];
      } else if (n == 2) {
        inside = cross(hull[0], hull[1], p) == 0;  // bbox already bounds the segment
      } else {
        for (std::size_t i = 0; i < n && inside; ++i) {
          inside = cross(hull[i], hull[(i + 1) % n], p) >= 0;
        }
      }
      if (inside) out(x, y) = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contours

BitMask fill_holes(const BitMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  BitMask outside(w, h, 0);
  std::vector<Point> stack;
  const auto seed = [&](int x, int y) {
    if (!mask(x, y) && !outside(x, y)) {
      outside(x, y) = 1;
      stack.push_back({x, y});
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  while (!stack.empty()) {
    const Point p = stack.back();
    stack.pop_back();
    for (const Point d : {Point{1, 0}, Point{-1, 0}, Point{0, 1}, Point{0, -1}}) {
      const int nx = p.x + d.x;
      const int ny = p.y + d.y;
      if (mask.contains(nx, ny)) seed(nx, ny);
    }
  }
  BitMask filled(w, h, 0);
  for (std::size_t i = 0; i < filled.size(); ++i) filled[i] = outside[i] ? 0 : 1;
  return filled;
}

std::vector<Contour> contours(const BitMask& mask) {
  const InstanceMap cc = connected_components(fill_holes(mask), Connectivity::eight);
  std::vector<Contour> out(cc.count());
  for (int y = 0; y < cc.height(); ++y) {
    for (int x = 0; x < cc.width(); ++x) {
      const std::uint32_t id = cc.ids(x, y);
      if (id != 0) out[id - 1].pixels.push_back({x, y});
    }
  }
  for (auto& c : out) c.area = c.pixels.size();
  return out;
}

// ---------------------------------------------------------------------------
// Distance transform

namespace {

constexpr double kFar = 1e20;

// Felzenszwalb-Huttenlocher lower envelope of parabolas, in place.
void edt_1d(std::span<double> f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  d.resize(static_cast<std::size_t>(n));
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  const auto intersect = [&](int q, int vk) {
    return ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q) -
            (f[static_cast<std::size_t>(vk)] + static_cast<double>(vk) * vk)) /
           (2.0 * (q - vk));
  };
  for (int q = 1; q < n; ++q) {
    // z[0] = -inf bounds the scan.
    double s = intersect(q, v[static_cast<std::size_t>(k)]);
    while (s <= z[static_cast<std::size_t>(k)]) {
      --k;
      s = intersect(q, v[static_cast<std::size_t>(k)]);
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int vk = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = static_cast<double>(q - vk) * (q - vk) + f[static_cast<std::size_t>(vk)];
  }
  std::copy(d.begin(), d.end(), f.begin());
}

}  // namespace

Raster<double> squared_distance_transform(const BitMask& region, int workers) {
  const int w = region.width();
  const int h = region.height();
  Raster<double> dist(w, h, kFar);
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region[i]) dist[i] = 0.0;
  }
  parallel_for(static_cast<std::size_t>(w), workers, [&](std::size_t x0, std::size_t x1) {
    std::vector<double> col(static_cast<std::size_t>(h)), d, z;
    std::vector<int> v;
    for (std::size_t x = x0; x < x1; ++x) {
      for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = dist(static_cast<int>(x), y);
      edt_1d(col, d, v, z);
      for (int y = 0; y < h; ++y) dist(static_cast<int>(x), y) = col[static_cast<std::size_t>(y)];
    }
  });
  parallel_for(static_cast<std::size_t>(h), workers, [&](std::size_t y0, std::size_t y1) {
    std::vector<double> d, z;
    std::vector<int> v;
    for (std::size_t y = y0; y < y1; ++y) edt_1d(dist.row(static_cast<int>(y)), d, v, z);
  });
  for (auto& v : dist.pixels()) {
    if (v >= kFar * 0.5) v = std::numeric_limits<double>::infinity();
  }
  return dist;
}

BitMask distance_band(const BitMask& region, double radius_um, double mpp, int workers) {
  if (!(radius_um > 0.0) || !(mpp > 0.0)) throw usage_error("distance_band: radius and mpp must be positive");
  BitMask band(region.width(), region.height(), 0);
  if (count_set(region) == 0) return band;
  const double r = radius_um / mpp;
  const double r2 = r * r;
  const auto dist = squared_distance_transform(region, workers);
  for (std::size_t i = 0; i < band.size(); ++i) {
    band[i] = (!region[i] && dist[i] <= r2) ? 1 : 0;
  }
  return band;
}

std::uint64_t count_set(const BitMask& m) {
  std::uint64_t n = 0;
  for (auto v : m.pixels()) n += v ? 1 : 0;
  return n;
}

}  // namespace tmeseg
