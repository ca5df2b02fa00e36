#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/error.hpp"
#include "tmeseg/raster.hpp"

namespace tmeseg {

struct TilePlan {
  int crop = 384;
  int stride = 320;
  /// Context pixels added on every side of a window (clipped at the extent).
  int halo = 0;

  void validate() const;
};

struct TileWindow {
  // Core rectangle: the pixels this window owns when stitching.
  int x = 0, y = 0, w = 0, h = 0;
  // Core plus halo, clipped to the extent.
  int hx = 0, hy = 0, hw = 0, hh = 0;

  bool operator==(const TileWindow&) const = default;
};

/// Offsets 0, stride, 2*stride, ... with the last window pulled back to end
/// exactly at the extent. An axis shorter than the crop gets one window of
/// the axis length. Windows come in row-major order.
std::vector<TileWindow> iterate_tiles(int width, int height, const TilePlan& plan);

/// Last writer wins, in window order. `tiles[i]` has the core size of
/// `windows[i]`.
template <class T>
Raster<T> stitch_last_writer(std::span<const Raster<T>> tiles, std::span<const TileWindow> windows, int width,
                             int height, T fill = T{}) {
  if (tiles.size() != windows.size()) throw usage_error("stitch: tile and window counts differ");
  Raster<T> out(width, height, fill);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    const auto& w = windows[i];
    if (t.width() != w.w || t.height() != w.h) throw usage_error("stitch: tile does not match its window");
    for (int y = 0; y < w.h; ++y) {
      for (int x = 0; x < w.w; ++x) out(w.x + x, w.y + y) = t(x, y);
    }
  }
  return out;
}

LabelRaster stitch_labels(std::span<const LabelRaster> tiles, std::span<const TileWindow> windows, int width,
                          int height);

/// Overlapping logits are summed; argmax happens after stitching.
LogitStack stitch_logits(std::span<const LogitStack> tiles, std::span<const TileWindow> windows, int width,
                         int height);

enum class ThresholdScope { per_tile, global };

struct TiledAggregation {
  AggregationResult result;
  std::vector<TileWindow> windows;
};

/// Aggregates each haloed window independently (in parallel across
/// cfg.workers) and stitches the cores. Nuclei keep their bundle ids; a
/// nucleus decision comes from the last window whose core touches it, and
/// a candidate outcome from the last window whose core contains it. Mitosis
/// region ids are offset per window so they stay distinct.
TiledAggregation aggregate_tiled(const TeacherBundle& b, const TilePlan& plan, const AggregatorConfig& cfg = {},
                                 ThresholdScope scope = ThresholdScope::per_tile,
                                 const Taxonomy& tax = Taxonomy::builtin());

/// Halves both axes: 2x2 means for colour and logits (colour rounded half
/// up), the top-left pixel for instance ids, halved candidate coordinates.
/// Odd trailing rows and columns are dropped.
TeacherBundle downscale_2x(const TeacherBundle& b);

}  // namespace tmeseg
