#include "tmeseg/testkit/synth.hpp"

#include <algorithm>
#include <cmath>

namespace tmeseg::testkit {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::bits() { return engine_(); }

double Rng::uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

int Rng::range(int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
  return lo + static_cast<int>(bits() % span);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

bool Rng::chance(double p) { return uniform() < p; }

bool Ellipse::contains(int x, int y) const {
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

namespace {

const std::array<std::vector<ClassId>, kHierarchyLevels> kLevels = {{
    {cls::smooth_muscle, cls::epithelial_tissue},
    {cls::leukocyte, cls::endothelial, cls::red_blood_cell},
    {cls::lymphocyte, cls::plasma_cell, cls::myeloid_cell},
    {cls::eosinophil, cls::neutrophil},
}};

const std::vector<NucleusType> kTeacherTypes = {NucleusType::none,     NucleusType::neoplastic, NucleusType::inflammatory,
                                                NucleusType::connective, NucleusType::dead,     NucleusType::epithelial};

std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

Rgb jitter(Rng& rng, Rgb base, int amp) {
  return Rgb{clamp8(base.r + rng.range(-amp, amp)), clamp8(base.g + rng.range(-amp, amp)),
             clamp8(base.b + rng.range(-amp, amp))};
}

float noise(Rng& rng, bool quantized, double lo, double hi) {
  if (quantized) {
    const int steps = static_cast<int>(std::lround((hi - lo) * 2));
    return static_cast<float>(lo + 0.5 * rng.range(0, steps));
  }
  return static_cast<float>(rng.uniform(lo, hi));
}

constexpr Rgb kBackground{236, 232, 240};
constexpr Rgb kTissue{215, 150, 190};
constexpr Rgb kNucleus{110, 70, 150};
constexpr Rgb kFigure{60, 35, 85};
constexpr Rgb kDust{12, 10, 12};

}  // namespace

Scene random_scene(std::uint64_t seed, const SceneLimits& limits) {
  Rng rng(seed);
  Scene s;
  s.seed = rng.bits();
  s.width = rng.range(limits.min_size, limits.max_size);
  s.height = rng.range(limits.min_size, limits.max_size);
  s.quantized = rng.chance(0.8);
  const double w = s.width, h = s.height;
  s.tissue_region = {rng.uniform(0.3, 0.7) * w, rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.8) * w,
                     rng.uniform(0.3, 0.8) * h};

  const int blobs = rng.range(1, 4);
  for (int i = 0; i < blobs; ++i) {
    TissueBlob b;
    const double u = rng.uniform();
    b.cls = u < 0.55 ? cls::epithelial_tissue : (u < 0.85 ? cls::smooth_muscle : cls::red_blood_cell);
    b.shape = {rng.uniform(0, w), rng.uniform(0, h), rng.uniform(5, 0.5 * w), rng.uniform(5, 0.5 * h)};
    b.logit = static_cast<float>(rng.pick(std::vector<double>{0.0, 0.5, 1.0, 2.0}));
    s.tissue.push_back(b);
  }

  const int want = rng.range(0, limits.max_nuclei);
  for (int attempt = 0; attempt < 10 * want && static_cast<int>(s.nuclei.size()) < want; ++attempt) {
    NucleusSpec n;
    n.shape = {static_cast<double>(rng.range(0, s.width - 1)), static_cast<double>(rng.range(0, s.height - 1)),
               rng.uniform(1.5, 5.5), rng.uniform(1.5, 5.5)};
    bool clash = false;
    for (const auto& o : s.nuclei) {
      const int x0 = static_cast<int>(std::floor(std::max(n.shape.cx - n.shape.rx, o.shape.cx - o.shape.rx)));
      const int x1 = static_cast<int>(std::ceil(std::min(n.shape.cx + n.shape.rx, o.shape.cx + o.shape.rx)));
      const int y0 = static_cast<int>(std::floor(std::max(n.shape.cy - n.shape.ry, o.shape.cy - o.shape.ry)));
      const int y1 = static_cast<int>(std::ceil(std::min(n.shape.cy + n.shape.ry, o.shape.cy + o.shape.ry)));
      for (int y = y0; y <= y1 && !clash; ++y) {
        for (int x = x0; x <= x1 && !clash; ++x) clash = n.shape.contains(x, y) && o.shape.contains(x, y);
      }
      if (clash) break;
    }
    if (clash) continue;
    if (rng.chance(0.5)) n.targets[0] = rng.pick(kLevels[0]);
    if (rng.chance(0.6)) n.targets[1] = rng.pick(kLevels[1]);
    const bool leuko = n.targets[1] == cls::leukocyte;
    if (rng.chance(leuko ? 0.7 : 0.15)) n.targets[2] = rng.pick(kLevels[2]);
    if (rng.chance(leuko ? 0.3 : 0.1)) n.targets[3] = rng.pick(kLevels[3]);
    n.magnitude = static_cast<float>(rng.pick(std::vector<double>{0.5, 1.0, 1.5, 2.0}));
    n.pixel_noise = rng.pick(std::vector<double>{0.0, 0.1, 0.3});
    n.teacher_type = rng.pick(kTeacherTypes);
    s.nuclei.push_back(n);
  }

  const int cands = rng.range(0, limits.max_candidates);
  for (int i = 0; i < cands; ++i) {
    CandidateSpec c;
    if (!s.nuclei.empty() && rng.chance(0.5)) {
      const auto& n = rng.pick(s.nuclei);
      c.x = n.shape.cx;
      c.y = n.shape.cy;
    } else {
      c.x = rng.uniform(0, w - 1);
      c.y = rng.uniform(0, h - 1);
    }
    c.score = rng.pick(std::vector<double>{0.2, 1.0});
    if (rng.chance(0.2)) {
      c.dust = true;
      c.figure_radius = rng.range(4, 30);
    } else if (rng.chance(0.7)) {
      c.figure_radius = rng.range(1, 5);
    }
    s.candidates.push_back(c);
  }
  return s;
}

TeacherBundle render_scene(const Scene& s) {
  if (s.width < 1 || s.height < 1) throw usage_error("scene: empty extent");
  Rng rng(s.seed);
  const int w = s.width, h = s.height;
  TeacherBundle b;
  b.he = RgbTile(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      b.he(x, y) = s.tissue_region.contains(x, y) ? jitter(rng, kTissue, 6) : jitter(rng, kBackground, 4);
    }
  }

  b.tissue_logits = LogitStack(w, h, tissue_channels());
  for (std::size_t c = 0; c < b.tissue_logits.channels().size(); ++c) {
    for (auto& v : b.tissue_logits.plane_at(c).pixels()) v = noise(rng, s.quantized, -1.5, -0.5);
  }
  for (const auto& blob : s.tissue) {
    if (blob.cls != cls::smooth_muscle && blob.cls != cls::epithelial_tissue && blob.cls != cls::red_blood_cell) {
      throw usage_error("scene: tissue blobs must be smooth muscle, epithelium or red blood cells");
    }
    auto& plane = b.tissue_logits.plane(blob.cls);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (blob.shape.contains(x, y)) plane(x, y) = blob.logit + noise(rng, s.quantized, -0.5, 0.5);
      }
    }
  }

  std::vector<ClassId> cell = cell_channels();
  b.cell_logits = LogitStack(w, h, cell);
  for (std::size_t c = 0; c < cell.size(); ++c) {
    for (auto& v : b.cell_logits.plane_at(c).pixels()) v = noise(rng, s.quantized, -2.0, 2.0);
  }

  b.nuclei = InstanceMap(w, h);
  for (std::size_t k = 0; k < s.nuclei.size(); ++k) {
    const auto& n = s.nuclei[k];
    const auto id = static_cast<std::uint32_t>(k + 1);
    bool any = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!n.shape.contains(x, y)) continue;
        if (b.nuclei.ids(x, y) != 0) throw usage_error("scene: nuclei overlap");
        any = true;
        b.nuclei.ids(x, y) = id;
        b.he(x, y) = jitter(rng, kNucleus, 8);
        const bool scrambled = rng.chance(n.pixel_noise);
        for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
          for (ClassId c : kLevels[l]) {
            float v;
            if (scrambled) {
              v = noise(rng, s.quantized, -2.0, 2.0);
            } else if (n.targets[l] == c) {
              v = n.magnitude + noise(rng, s.quantized, -1.0, 1.0);
            } else {
              v = -0.5f * n.magnitude + noise(rng, s.quantized, -1.0, 1.0);
            }
            b.cell_logits.plane(c)(x, y) = v;
          }
        }
      }
    }
    if (!any) throw usage_error("scene: nucleus " + std::to_string(id) + " has no pixels in the tile");
    b.nuclei.attrs[id].teacher_type = n.teacher_type;
  }
  b.nuclei.refresh_attrs();

  for (const auto& c : s.candidates) {
    if (c.figure_radius > 0) {
      const Ellipse disc{c.x, c.y, static_cast<double>(c.figure_radius), static_cast<double>(c.figure_radius)};
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (disc.contains(x, y)) b.he(x, y) = c.dust ? jitter(rng, kDust, 4) : jitter(rng, kFigure, 10);
        }
      }
    }
    b.mitosis_candidates.push_back({c.x, c.y, c.score});
  }
  return b;
}

Fixture synth_fixture(const Scene& scene, const AggregatorConfig& cfg) {
  Fixture f;
  f.bundle = render_scene(scene);
  f.truth = reference_aggregate(f.bundle, cfg);
  return f;
}

TeacherBundle synth_large(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  TeacherBundle b;
  b.he = RgbTile(width, height);
  b.tissue_logits = LogitStack(width, height, tissue_channels());
  b.cell_logits = LogitStack(width, height, cell_channels());
  b.nuclei = InstanceMap(width, height);

  // Background margin, then alternating epithelium / smooth muscle blocks.
  const int margin = std::max(8, std::min(width, height) / 16);
  auto& sm = b.tissue_logits.plane(cls::smooth_muscle);
  auto& epi = b.tissue_logits.plane(cls::epithelial_tissue);
  auto& rbc = b.tissue_logits.plane(cls::red_blood_cell);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool inside = x >= margin && y >= margin && x < width - margin && y < height - margin;
      b.he(x, y) = inside ? jitter(rng, kTissue, 6) : jitter(rng, kBackground, 4);
      const int block = (x / 192 + y / 192) % 3;
      sm(x, y) = block == 1 ? 1.5f : -1.0f;
      epi(x, y) = block == 0 ? 1.5f : -1.0f;
      rbc(x, y) = (x / 64) % 7 == 3 && (y / 64) % 5 == 2 ? 1.0f : -1.0f;
    }
  }
  for (std::size_t c = 0; c < b.cell_logits.channels().size(); ++c) {
    for (auto& v : b.cell_logits.plane_at(c).pixels()) v = -1.0f + 0.25f * static_cast<float>(rng.bits() % 5);
  }

  constexpr int kPitch = 16;
  std::uint32_t id = 0;
  for (int cy = margin + kPitch / 2; cy < height - margin; cy += kPitch) {
    for (int cx = margin + kPitch / 2; cx < width - margin; cx += kPitch) {
      ++id;
      const int r = rng.range(3, 6);
      std::array<std::optional<ClassId>, kHierarchyLevels> targets{};
      for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
        if (rng.chance(0.5)) targets[l] = rng.pick(kLevels[l]);
      }
      for (int y = cy - r; y <= cy + r; ++y) {
        for (int x = cx - r; x <= cx + r; ++x) {
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r) continue;
          b.nuclei.ids(x, y) = id;
          b.he(x, y) = jitter(rng, kNucleus, 8);
          for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
            for (ClassId c : kLevels[l]) b.cell_logits.plane(c)(x, y) = targets[l] == c ? 1.5f : -1.0f;
          }
        }
      }
      b.nuclei.attrs[id].teacher_type = rng.pick(kTeacherTypes);
    }
  }
  b.nuclei.refresh_attrs();

  const int cands = std::max(1, width * height / (256 * 256));
  for (int i = 0; i < cands; ++i) {
    b.mitosis_candidates.push_back({rng.uniform(margin, width - margin - 1), rng.uniform(margin, height - margin - 1), 1.0});
  }
  return b;
}

}  // namespace tmeseg::testkit
