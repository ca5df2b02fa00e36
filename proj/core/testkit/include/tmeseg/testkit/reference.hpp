#pragma once

// Slow per-pixel reference for the aggregation pipeline. Shares nothing with
// the optimized code except the Gaussian tap values and the container types.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "tmeseg/aggregator.hpp"

namespace tmeseg::testkit {

struct ReferenceResult {
  LabelRaster semantic;
  LabelRaster tissue;
  std::map<std::uint32_t, std::optional<ClassId>> classes;
  BitMask mitosis_mask;
  std::uint8_t background_threshold = 0;
};

ReferenceResult reference_aggregate(const TeacherBundle& b, const AggregatorConfig& cfg = {});

// Building blocks, exposed for their own oracle tests.
RgbTile reference_smooth(const RgbTile& img, double sigma);
std::uint8_t reference_otsu(const Histogram& hist);
/// Component id per pixel (0 = unset), numbered in raster order of first pixel.
IdRaster reference_components(const BitMask& mask, int connectivity);
BitMask reference_fill_holes(const BitMask& mask);
/// Lattice points of the closed convex hull, in a width x height raster.
BitMask reference_hull_fill(const std::vector<Point>& pts, int width, int height);
/// Per-pixel level walk and vote; nullopt for undefined.
std::optional<ClassId> reference_classify(const std::vector<std::size_t>& pixels, const LogitStack& logits);

}  // namespace tmeseg::testkit
