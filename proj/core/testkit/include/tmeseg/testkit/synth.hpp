#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/testkit/reference.hpp"

namespace tmeseg::testkit {

/// Seeded generator. Only raw mt19937_64 output is used (the standard fixes
/// it, unlike the distribution classes), so fixtures match across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t bits();
  double uniform();                // [0, 1)
  int range(int lo, int hi);       // [lo, hi]
  double uniform(double lo, double hi);
  bool chance(double p);
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(range(0, static_cast<int>(v.size()) - 1))];
  }

 private:
  std::mt19937_64 engine_;
};

struct Ellipse {
  double cx = 0, cy = 0, rx = 1, ry = 1;
  bool contains(int x, int y) const;
};

struct TissueBlob {
  Ellipse shape;
  ClassId cls = cls::epithelial_tissue;  // smooth_muscle, epithelial_tissue or red_blood_cell
  float logit = 2.0f;
};

struct NucleusSpec {
  Ellipse shape;
  /// Per hierarchy level, the class pushed positive (nullopt = none).
  std::array<std::optional<ClassId>, kHierarchyLevels> targets{};
  float magnitude = 1.0f;
  /// Chance that a pixel's logits are redrawn at random.
  double pixel_noise = 0.0;
  NucleusType teacher_type = NucleusType::none;
};

struct CandidateSpec {
  double x = 0, y = 0, score = 1.0;
  /// Paint a dark figure of this radius under the candidate (0 = none).
  int figure_radius = 0;
  /// Carbon dust instead of a mitotic figure.
  bool dust = false;
};

struct Scene {
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;  // pixel noise
  Ellipse tissue_region;   // non-background area of the H&E
  std::vector<TissueBlob> tissue;
  std::vector<NucleusSpec> nuclei;
  std::vector<CandidateSpec> candidates;
  /// Logit values are drawn on a 0.5 grid so ties occur.
  bool quantized = true;
};

struct SceneLimits {
  int min_size = 32;
  int max_size = 128;
  int max_nuclei = 20;
  int max_candidates = 5;
};

/// Random scene; overlapping nuclei are redrawn, so the result is always valid.
Scene random_scene(std::uint64_t seed, const SceneLimits& limits = {});

struct Fixture {
  TeacherBundle bundle;
  ReferenceResult truth;
};

/// Renders the scene. Throws a usage error if two nuclei share a pixel.
TeacherBundle render_scene(const Scene& scene);
Fixture synth_fixture(const Scene& scene, const AggregatorConfig& cfg = {});

/// Large bundle for throughput runs: a regular grid of nuclei over tissue,
/// all cell-logit channels, a few candidates. No reference is computed.
TeacherBundle synth_large(int width, int height, std::uint64_t seed);

}  // namespace tmeseg::testkit
