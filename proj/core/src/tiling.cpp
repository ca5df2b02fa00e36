#include "tmeseg/tiling.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "tmeseg/parallel.hpp"

namespace tmeseg {

void TilePlan::validate() const {
  if (crop < 1) throw usage_error(fmt::format("tile plan: crop must be positive (got {})", crop));
  if (stride < 1 || stride > crop) {
    throw usage_error(fmt::format("tile plan: stride must satisfy 0 < stride <= crop (got {}, crop {})", stride, crop));
  }
  if (halo < 0) throw usage_error(fmt::format("tile plan: halo must be non-negative (got {})", halo));
}

namespace {

std::vector<int> axis_offsets(int extent, int crop, int stride) {
  if (extent <= crop) return {0};
  std::vector<int> out;
  for (int o = 0;; o += stride) {
    if (o + crop >= extent) {
      out.push_back(extent - crop);
      break;
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace

std::vector<TileWindow> iterate_tiles(int width, int height, const TilePlan& plan) {
  plan.validate();
  if (width < 1 || height < 1) throw usage_error("iterate_tiles: empty extent");
  const auto xs = axis_offsets(width, plan.crop, plan.stride);
  const auto ys = axis_offsets(height, plan.crop, plan.stride);
  std::vector<TileWindow> out;
  out.reserve(xs.size() * ys.size());
  for (int y : ys) {
    for (int x : xs) {
      TileWindow w;
      w.x = x;
      w.y = y;
      w.w = std::min(plan.crop, width);
      w.h = std::min(plan.crop, height);
      w.hx = std::max(0, x - plan.halo);
      w.hy = std::max(0, y - plan.halo);
      w.hw = std::min(width, x + w.w + plan.halo) - w.hx;
      w.hh = std::min(height, y + w.h + plan.halo) - w.hy;
      out.push_back(w);
    }
  }
  return out;
}

LabelRaster stitch_labels(std::span<const LabelRaster> tiles, std::span<const TileWindow> windows, int width,
                          int height) {
  return stitch_last_writer<ClassId>(tiles, windows, width, height, cls::background);
}

LogitStack stitch_logits(std::span<const LogitStack> tiles, std::span<const TileWindow> windows, int width,
                         int height) {
  if (tiles.empty() || tiles.size() != windows.size()) throw usage_error("stitch: tile and window counts differ");
  LogitStack out(width, height, tiles.front().channels());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    const auto& w = windows[i];
    if (t.channels() != out.channels()) throw usage_error("stitch: tiles carry different channels");
    if (t.width() != w.w || t.height() != w.h) throw usage_error("stitch: tile does not match its window");
    for (std::size_t c = 0; c < out.channels().size(); ++c) {
      auto& dst = out.plane_at(c);
      const auto& src = t.plane_at(c);
      for (int y = 0; y < w.h; ++y) {
        for (int x = 0; x < w.w; ++x) dst(w.x + x, w.y + y) += src(x, y);
      }
    }
  }
  return out;
}

TiledAggregation aggregate_tiled(const TeacherBundle& b, const TilePlan& plan, const AggregatorConfig& cfg,
                                 ThresholdScope scope, const Taxonomy& tax) {
  b.validate(tax);
  TiledAggregation out;
  out.windows = iterate_tiles(b.width(), b.height(), plan);
  const auto& windows = out.windows;
  const int workers = resolve_workers(cfg.workers);

  AggregatorConfig tile_cfg = cfg;
  tile_cfg.workers = windows.size() > 1 ? 1 : workers;
  if (scope == ThresholdScope::global && !cfg.background_threshold) {
    tile_cfg.background_threshold = otsu_threshold(to_gray(gaussian_smooth(b.he, cfg.sigma, workers)));
  }

  std::vector<AggregationResult> parts(windows.size());
  parallel_for(windows.size(), windows.size() > 1 ? workers : 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& w = windows[i];
      parts[i] = aggregate(b.crop(w.hx, w.hy, w.hw, w.hh), tile_cfg, tax);
    }
  });

  // Single-owner merge in window order.
  AggregationResult& r = out.result;
  r.semantic = LabelRaster(b.width(), b.height(), cls::background);
  r.tissue = LabelRaster(b.width(), b.height(), cls::background);
  r.instances = b.nuclei;
  r.mitosis.regions = IdRaster(b.width(), b.height(), 0u);
  r.mitosis.mask = BitMask(b.width(), b.height(), 0);
  r.mitosis.outcomes.assign(b.mitosis_candidates.size(), CandidateOutcome::accepted);
  r.background_threshold = parts.front().background_threshold;

  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const auto& p = parts[i];
    const int ox = w.x - w.hx;
    const int oy = w.y - w.hy;
    std::set<std::uint32_t> touched;
    for (int y = 0; y < w.h; ++y) {
      for (int x = 0; x < w.w; ++x) {
        const int gx = w.x + x, gy = w.y + y;
        r.semantic(gx, gy) = p.semantic(ox + x, oy + y);
        r.tissue(gx, gy) = p.tissue(ox + x, oy + y);
        r.mitosis.mask(gx, gy) = p.mitosis.mask(ox + x, oy + y);
        const std::uint32_t reg = p.mitosis.regions(ox + x, oy + y);
        r.mitosis.regions(gx, gy) = reg == 0 ? 0 : reg + r.mitosis.region_count;
        if (const std::uint32_t id = b.nuclei.ids(gx, gy); id != 0) touched.insert(id);
      }
    }
    r.mitosis.region_count += p.mitosis.region_count;
    for (std::uint32_t id : touched) r.decisions[id] = p.decisions.at(id);

    // Tile candidates are the bundle candidates inside the haloed window, in
    // bundle order, so a running index recovers the bundle index.
    std::size_t k = 0;
    for (std::size_t c = 0; c < b.mitosis_candidates.size(); ++c) {
      const long cx = std::lround(b.mitosis_candidates[c].x);
      const long cy = std::lround(b.mitosis_candidates[c].y);
      const bool in_halo = cx >= w.hx && cy >= w.hy && cx < w.hx + w.hw && cy < w.hy + w.hh;
      if (!in_halo) continue;
      const bool in_core = cx >= w.x && cy >= w.y && cx < w.x + w.w && cy < w.y + w.h;
      if (in_core) r.mitosis.outcomes[c] = p.mitosis.outcomes.at(k);
      ++k;
    }
  }
  return out;
}

TeacherBundle downscale_2x(const TeacherBundle& b) {
  const int w = b.width() / 2;
  const int h = b.height() / 2;
  if (w < 1 || h < 1) throw usage_error("downscale: bundle smaller than 2x2");
  TeacherBundle out;
  out.he = RgbTile(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb a = b.he(2 * x, 2 * y), c = b.he(2 * x + 1, 2 * y), d = b.he(2 * x, 2 * y + 1),
                e = b.he(2 * x + 1, 2 * y + 1);
      auto mean4 = [](int p, int q, int r, int s) { return static_cast<std::uint8_t>((p + q + r + s + 2) / 4); };
      out.he(x, y) = Rgb{mean4(a.r, c.r, d.r, e.r), mean4(a.g, c.g, d.g, e.g), mean4(a.b, c.b, d.b, e.b)};
    }
  }
  auto shrink = [&](const LogitStack& s) {
    LogitStack o(w, h, s.channels());
    for (std::size_t c = 0; c < s.channels().size(); ++c) {
      const auto& src = s.plane_at(c);
      auto& dst = o.plane_at(c);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          dst(x, y) = (src(2 * x, 2 * y) + src(2 * x + 1, 2 * y) + src(2 * x, 2 * y + 1) + src(2 * x + 1, 2 * y + 1)) /
                      4.0f;
        }
      }
    }
    return o;
  };
  out.tissue_logits = shrink(b.tissue_logits);
  out.cell_logits = shrink(b.cell_logits);
  out.nuclei = InstanceMap(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.nuclei.ids(x, y) = b.nuclei.ids(2 * x, 2 * y);
  }
  out.nuclei.attrs = b.nuclei.attrs;
  out.nuclei.refresh_attrs();
  for (const auto& c : b.mitosis_candidates) {
    const MitosisCandidate s{c.x / 2.0, c.y / 2.0, c.score};
    if (std::lround(s.x) < w && std::lround(s.y) < h) out.mitosis_candidates.push_back(s);
  }
  return out;
}

}  // namespace tmeseg
