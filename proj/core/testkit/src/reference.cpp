#include "tmeseg/testkit/reference.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

#include <boost/multiprecision/cpp_int.hpp>

namespace tmeseg::testkit {

namespace {

int mirror(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

std::uint8_t gray(Rgb p) { return static_cast<std::uint8_t>(std::lround((p.r + p.g + p.b) / 3.0)); }

long long orient(Point a, Point b, Point c) {
  return static_cast<long long>(b.x - a.x) * (c.y - a.y) - static_cast<long long>(b.y - a.y) * (c.x - a.x);
}

bool on_segment(Point a, Point b, Point p) {
  return orient(a, b, p) == 0 && p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
         p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
}

bool in_triangle(Point a, Point b, Point c, Point p) {
  const long long d1 = orient(a, b, p);
  const long long d2 = orient(b, c, p);
  const long long d3 = orient(c, a, p);
  const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(has_neg && has_pos);
}

long long dist2(Point a, Point b) {
  const long long dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Gift wrapping; among collinear candidates the farthest is taken.
std::vector<Point> jarvis(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull;
  Point cur = pts.front();
  do {
    hull.push_back(cur);
    Point next = pts[0] == cur ? pts[1] : pts[0];
    for (const Point& q : pts) {
      if (q == cur) continue;
      const long long o = orient(cur, next, q);
      if (o < 0 || (o == 0 && dist2(cur, q) > dist2(cur, next))) next = q;
    }
    cur = next;
  } while (cur != hull.front() && hull.size() <= pts.size());
  return hull;
}

struct Bfs {
  const BitMask& mask;
  int conn;
  IdRaster ids;

  explicit Bfs(const BitMask& m, int c) : mask(m), conn(c), ids(m.width(), m.height(), 0u) {}

  void run() {
    std::uint32_t next = 0;
    for (int y = 0; y < mask.height(); ++y) {
      for (int x = 0; x < mask.width(); ++x) {
        if (!mask(x, y) || ids(x, y) != 0) continue;
        ++next;
        std::deque<Point> q{{x, y}};
        ids(x, y) = next;
        while (!q.empty()) {
          const Point p = q.front();
          q.pop_front();
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              if (dx == 0 && dy == 0) continue;
              if (conn == 4 && dx != 0 && dy != 0) continue;
              const int nx = p.x + dx, ny = p.y + dy;
              if (nx < 0 || ny < 0 || nx >= mask.width() || ny >= mask.height()) continue;
              if (!mask(nx, ny) || ids(nx, ny) != 0) continue;
              ids(nx, ny) = next;
              q.push_back({nx, ny});
            }
          }
        }
      }
    }
  }
};

const std::array<std::vector<ClassId>, 4> kLevels = {{
    {cls::smooth_muscle, cls::epithelial_tissue},
    {cls::leukocyte, cls::endothelial, cls::red_blood_cell},
    {cls::lymphocyte, cls::plasma_cell, cls::myeloid_cell},
    {cls::eosinophil, cls::neutrophil},
}};

}  // namespace

RgbTile reference_smooth(const RgbTile& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  long long ksum = 0;
  for (auto v : k) ksum += v;
  const long long norm = ksum * ksum;
  RgbTile out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      std::array<long long, 3> acc{};
      for (int j = -r; j <= r; ++j) {
        for (int i = -r; i <= r; ++i) {
          const long long wgt = k[static_cast<std::size_t>(i + r)] * k[static_cast<std::size_t>(j + r)];
          const Rgb p = img(mirror(x + i, img.width()), mirror(y + j, img.height()));
          acc[0] += wgt * p.r;
          acc[1] += wgt * p.g;
          acc[2] += wgt * p.b;
        }
      }
      std::array<std::uint8_t, 3> v{};
      for (int c = 0; c < 3; ++c) {
        // Round half up.
        const long long q = acc[static_cast<std::size_t>(c)] / norm;
        const long long rem = acc[static_cast<std::size_t>(c)] % norm;
        v[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::min(255LL, 2 * rem >= norm ? q + 1 : q));
      }
      out(x, y) = Rgb{v[0], v[1], v[2]};
    }
  }
  return out;
}

std::uint8_t reference_otsu(const Histogram& hist) {
  using boost::multiprecision::cpp_rational;
  cpp_rational total = 0, total_sum = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[static_cast<std::size_t>(i)];
    total_sum += cpp_rational(hist[static_cast<std::size_t>(i)]) * i;
  }
  // Every split t (class 0 = values <= t) is scored with the textbook
  // between-class variance w0 * w1 * (mu0 - mu1)^2 in exact rationals.
  std::optional<int> best;
  cpp_rational best_var = -1;
  cpp_rational n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[static_cast<std::size_t>(t)];
    s0 += cpp_rational(hist[static_cast<std::size_t>(t)]) * t;
    const cpp_rational n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const cpp_rational diff = s0 / n0 - (total_sum - s0) / n1;
    const cpp_rational var = (n0 / total) * (n1 / total) * diff * diff;
    if (var > best_var) {
      best_var = var;
      best = t;
    }
  }
  if (best) return static_cast<std::uint8_t>(*best);
  for (int i = 0; i < 256; ++i) {
    if (hist[static_cast<std::size_t>(i)] > 0) return static_cast<std::uint8_t>(i);
  }
  return 0;
}

IdRaster reference_components(const BitMask& mask, int connectivity) {
  Bfs b(mask, connectivity);
  b.run();
  return b.ids;
}

BitMask reference_fill_holes(const BitMask& mask) {
  // Background reachable from the border through 4-neighbours stays empty.
  BitMask inv(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = mask[i] ? 0 : 1;
  const IdRaster bg = reference_components(inv, 4);
  std::vector<bool> touches_border(inv.size() + 1, false);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (x == 0 || y == 0 || x == mask.width() - 1 || y == mask.height() - 1) touches_border[bg(x, y)] = true;
    }
  }
  BitMask out(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (mask[i] || !touches_border[bg[i]]) ? 1 : 0;
  return out;
}

BitMask reference_hull_fill(const std::vector<Point>& pts, int width, int height) {
  const auto hull = jarvis(pts);
  BitMask out(width, height, 0);
  // Hull points lie inside the bounding box of the input.
  int x0 = width, y0 = height, x1 = -1, y1 = -1;
  for (const Point& p : pts) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  for (int y = std::max(0, y0); y <= std::min(height - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(width - 1, x1); ++x) {
      const Point p{x, y};
      bool in = false;
      if (hull.size() == 1) {
        in = p == hull[0];
      } else if (hull.size() == 2) {
        in = on_segment(hull[0], hull[1], p);
      } else {
        for (std::size_t i = 1; i + 1 < hull.size() && !in; ++i) in = in_triangle(hull[0], hull[i], hull[i + 1], p);
      }
      out(x, y) = in ? 1 : 0;
    }
  }
  return out;
}

std::optional<ClassId> reference_classify(const std::vector<std::size_t>& pixels, const LogitStack& logits) {
  std::map<std::uint8_t, std::uint32_t> votes;
  std::uint32_t undefined = 0;
  for (std::size_t p : pixels) {
    std::optional<ClassId> label;
    for (const auto& level : kLevels) {
      float top = -INFINITY;
      for (ClassId c : level) top = std::max(top, logits.plane(c)[p]);
      if (!(top > 0.0f)) continue;
      ClassId winner = level.front();
      for (ClassId c : level) {
        if (logits.plane(c)[p] == top) {
          winner = c;
          break;
        }
      }
      label = winner;
    }
    if (label) {
      ++votes[label->value];
    } else {
      ++undefined;
    }
  }
  std::optional<ClassId> best;
  std::uint32_t best_n = 0;
  for (const auto& [c, n] : votes) {  // ascending id
    if (n > best_n) {
      best_n = n;
      best = ClassId(c);
    }
  }
  if (undefined > best_n) return std::nullopt;
  return best;
}

ReferenceResult reference_aggregate(const TeacherBundle& b, const AggregatorConfig& cfg) {
  const int w = b.width(), h = b.height();
  ReferenceResult out;

  // Tissue.
  const RgbTile smooth = reference_smooth(b.he, cfg.sigma);
  Histogram hist{};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) ++hist[gray(smooth(x, y))];
  }
  out.background_threshold = cfg.background_threshold ? *cfg.background_threshold : reference_otsu(hist);
  out.tissue = LabelRaster(w, h, cls::background);
  const auto& sm = b.tissue_logits.plane(cls::smooth_muscle);
  const auto& epi = b.tissue_logits.plane(cls::epithelial_tissue);
  const auto& rbc = b.tissue_logits.plane(cls::red_blood_cell);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (gray(smooth(x, y)) > out.background_threshold) continue;
      ClassId label = cls::stroma;
      const float a = sm(x, y), e = epi(x, y);
      if (a > 0 || e > 0) label = a >= e ? cls::smooth_muscle : cls::epithelial_tissue;
      if (rbc(x, y) > 0) label = cls::red_blood_cell;
      out.tissue(x, y) = label;
    }
  }

  // Nuclei.
  std::map<std::uint32_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < b.nuclei.ids.size(); ++i) {
    if (b.nuclei.ids[i] != 0) members[b.nuclei.ids[i]].push_back(i);
  }
  for (const auto& [id, px] : members) {
    std::optional<ClassId> c = reference_classify(px, b.cell_logits);
    if (c == cls::epithelial_tissue) {
      c = cls::epithelial_cell_nucleus;
    } else if (!c) {
      std::size_t n_epi = 0, n_str = 0;
      for (std::size_t p : px) {
        if (out.tissue[p] == cls::epithelial_tissue) ++n_epi;
        if (out.tissue[p] == cls::stroma) ++n_str;
      }
      const auto it = b.nuclei.attrs.find(id);
      const bool connective = it != b.nuclei.attrs.end() && it->second.teacher_type == NucleusType::connective;
      if (n_epi > cfg.epithelial_overlap * px.size()) {
        c = cls::epithelial_cell_nucleus;
      } else if (connective && n_str > cfg.stroma_overlap * px.size()) {
        c = cls::fibroblast;
      }
    }
    out.classes[id] = c;
  }

  // Mitosis.
  out.mitosis_mask = BitMask(w, h, 0);
  const long r2 = static_cast<long>(cfg.roi_radius) * cfg.roi_radius;
  for (const auto& cand : b.mitosis_candidates) {
    if (cand.score < cfg.candidate_score_threshold) continue;
    const int cx = static_cast<int>(std::floor(cand.x + 0.5));
    const int cy = static_cast<int>(std::floor(cand.y + 0.5));
    BitMask disc(w, h, 0);
    std::vector<int> sums;
    Histogram roi_hist{};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const long dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy > r2) continue;
        disc(x, y) = 1;
        const Rgb p = b.he(x, y);
        sums.push_back(p.r + p.g + p.b);
        ++roi_hist[gray(p)];
      }
    }
    if (sums.empty()) continue;
    std::sort(sums.begin(), sums.end());
    bool dark = false;
    switch (cfg.dark_statistic) {
      case DarkStatistic::median: dark = sums[(sums.size() - 1) / 2] <= cfg.dark_sum_threshold; break;
      case DarkStatistic::mean: {
        double s = 0;
        for (int v : sums) s += v;
        dark = s / sums.size() <= cfg.dark_sum_threshold;
        break;
      }
      case DarkStatistic::fraction: {
        std::size_t d = 0;
        for (int v : sums) d += v <= cfg.dark_sum_threshold ? 1 : 0;
        dark = d >= cfg.dark_fraction * sums.size();
        break;
      }
    }
    if (dark) continue;
    const std::uint8_t t = reference_otsu(roi_hist);
    BitMask fg(w, h, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) fg(x, y) = (disc(x, y) && gray(b.he(x, y)) <= t) ? 1 : 0;
    }
    const IdRaster comp = reference_components(reference_fill_holes(fg), 8);
    std::map<std::uint32_t, std::vector<Point>> blobs;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (comp(x, y) != 0) blobs[comp(x, y)].push_back({x, y});
      }
    }
    for (const auto& [id, pts] : blobs) {
      if (pts.size() < cfg.min_contour_area) continue;
      const BitMask hull = reference_hull_fill(pts, w, h);
      bool touches = false;
      for (std::size_t i = 0; i < hull.size(); ++i) touches = touches || (hull[i] && out.tissue[i] == cls::epithelial_tissue);
      if (!touches) continue;
      for (std::size_t i = 0; i < hull.size(); ++i) {
        if (hull[i]) out.mitosis_mask[i] = 1;
      }
    }
  }
  for (const auto& [id, px] : members) {
    for (std::size_t p : px) {
      if (out.mitosis_mask[p]) {
        out.classes[id] = cls::mitotic_cell;
        break;
      }
    }
  }

  out.semantic = out.tissue;
  for (const auto& [id, px] : members) {
    if (!out.classes[id]) continue;
    for (std::size_t p : px) out.semantic[p] = *out.classes[id];
  }
  return out;
}

}  // namespace tmeseg::testkit
