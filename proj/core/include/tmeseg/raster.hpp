#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmeseg/error.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

/// Row-major single-plane raster.
template <class T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw usage_error("raster dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(int w, int h) const { return w == width_ && h == height_; }
  template <class U>
  bool same_shape(const Raster<U>& o) const { return same_shape(o.width(), o.height()); }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }
  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> pixels() { return data_; }
  std::span<const T> pixels() const { return data_; }
  std::span<T> row(int y) { return std::span<T>(data_).subspan(index(0, y), static_cast<std::size_t>(width_)); }
  std::span<const T> row(int y) const {
    return std::span<const T>(data_).subspan(index(0, y), static_cast<std::size_t>(width_));
  }

  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

  /// Copy of the rectangle [x0, x0+w) x [y0, y0+h); must lie inside.
  Raster crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || x0 + w > width_ || y0 + h > height_ || w < 0 || h < 0) {
      throw usage_error("crop window outside raster");
    }
    Raster out(w, h);
    for (int y = 0; y < h; ++y) {
      const auto src = row(y0 + y).subspan(static_cast<std::size_t>(x0), static_cast<std::size_t>(w));
      std::copy(src.begin(), src.end(), out.row(y).begin());
    }
    return out;
  }

  bool operator==(const Raster&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  constexpr int sum() const { return int{r} + int{g} + int{b}; }
  bool operator==(const Rgb&) const = default;
};

using RgbTile = Raster<Rgb>;
using GrayRaster = Raster<std::uint8_t>;
/// One byte per pixel, 0 or 1.
using BitMask = Raster<std::uint8_t>;
using LabelRaster = Raster<ClassId>;
using IdRaster = Raster<std::uint32_t>;

struct Point {
  int x = 0, y = 0;
  auto operator<=>(const Point&) const = default;
};

enum class Connectivity { four = 4, eight = 8 };

/// Real-valued per-class planes sharing one extent.
class LogitStack {
 public:
  LogitStack() = default;
  LogitStack(int width, int height, std::vector<ClassId> channels);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<ClassId>& channels() const { return channels_; }

  bool has(ClassId c) const { return find(c).has_value(); }
  std::optional<std::size_t> find(ClassId c) const;
  Raster<float>& plane(ClassId c);
  const Raster<float>& plane(ClassId c) const;
  Raster<float>& plane_at(std::size_t i) { return planes_[i]; }
  const Raster<float>& plane_at(std::size_t i) const { return planes_[i]; }

  /// Throws a data error if any value is NaN/Inf or channels repeat.
  void validate() const;
  /// Throws a data error naming the first required channel that is missing.
  void require(std::span<const ClassId> needed, const Taxonomy& tax, const std::string& what) const;

  LogitStack crop(int x0, int y0, int w, int h) const;
  bool operator==(const LogitStack&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<ClassId> channels_;
  std::vector<Raster<float>> planes_;
};

/// Nucleus type reported by the nucleus-instance teacher. Not a taxonomy
/// class: only `connective` feeds the fibroblast fallback.
enum class NucleusType : std::uint8_t { none, neoplastic, inflammatory, connective, dead, epithelial };

std::string to_string(NucleusType t);
NucleusType parse_nucleus_type(std::string_view s);

struct InstanceAttrs {
  NucleusType teacher_type = NucleusType::none;
  std::uint64_t pixel_count = 0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Integer instance raster (0 = no instance) with per-instance attributes.
struct InstanceMap {
  IdRaster ids;
  std::map<std::uint32_t, InstanceAttrs> attrs;

  InstanceMap() = default;
  InstanceMap(int width, int height) : ids(width, height, 0u) {}

  int width() const { return ids.width(); }
  int height() const { return ids.height(); }
  std::size_t count() const { return attrs.size(); }

  /// Recomputes pixel counts and centroids from the raster; adds entries
  /// for ids missing from `attrs` and drops entries with no pixels.
  void refresh_attrs();
  /// Throws a data error when the attrs table disagrees with the raster.
  void validate() const;
  /// Pixel indices of every instance, keyed by id, in raster order.
  std::map<std::uint32_t, std::vector<std::uint32_t>> pixel_lists() const;

  InstanceMap crop(int x0, int y0, int w, int h) const;
};

// ---------------------------------------------------------------------------
// Kernels

/// Integer Gaussian kernel taps for offsets -radius..radius,
/// radius = ceil(3 sigma). Taps are round(2^16 g(i) / g(0)) so the separable
/// and direct 2-D convolutions accumulate identical integer sums.
std::vector<std::int64_t> gaussian_kernel(double sigma);

/// Reflect-101 index into [0, n): -1 -> 1, n -> n-2.
int reflect101(int i, int n);

/// Separable per-channel Gaussian blur with reflect-101 borders. The sum
/// sum_ij k_i k_j p is accumulated exactly and rounded half-up once.
RgbTile gaussian_smooth(const RgbTile& img, double sigma, int workers = 1);

/// Rounded mean of R, G, B: (r + g + b + 1) / 3.
constexpr std::uint8_t gray_of(Rgb p) { return static_cast<std::uint8_t>((p.sum() + 1) / 3); }
GrayRaster to_gray(const RgbTile& img);

using Histogram = std::array<std::uint64_t, 256>;

/// Smallest threshold t maximising between-class variance for the split
/// {<= t} vs {> t}. A histogram with one occupied bin returns that bin.
/// Throws on an empty histogram.
std::uint8_t otsu_threshold(const Histogram& hist);
std::uint8_t otsu_threshold(const GrayRaster& gray);

/// Labels 1..n in raster-scan order of each component's first pixel.
InstanceMap connected_components(const BitMask& mask, Connectivity conn = Connectivity::eight);

/// Convex hull without collinear vertices, counter-clockwise in the (x, y)
/// frame (positive signed area). One or two vertices for degenerate inputs.
std::vector<Point> convex_hull(std::vector<Point> points);
/// Pixels whose centres lie inside or on the hull polygon.
BitMask rasterize_hull(std::span<const Point> hull, int width, int height);

struct Contour {
  std::vector<Point> pixels;  // filled component, raster order
  std::uint64_t area = 0;
};

/// Fills enclosed holes (4-connected background not reaching the border).
BitMask fill_holes(const BitMask& mask);
/// One contour per 8-connected component of the hole-filled mask.
std::vector<Contour> contours(const BitMask& mask);

/// Exact squared Euclidean distance (in px^2) to the nearest set pixel;
/// +inf everywhere when the mask is empty.
Raster<double> squared_distance_transform(const BitMask& region, int workers = 1);

/// Pixels outside `region` within radius_um / mpp pixels of it.
BitMask distance_band(const BitMask& region, double radius_um, double mpp, int workers = 1);

std::uint64_t count_set(const BitMask& m);

}  // namespace tmeseg
