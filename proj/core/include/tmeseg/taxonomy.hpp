#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tmeseg {

/// Dense class identifier. Id 0 is always `background`.
struct ClassId {
  std::uint8_t value = 0;

  constexpr ClassId() = default;
  constexpr explicit ClassId(std::uint8_t v) : value(v) {}
  constexpr auto operator<=>(const ClassId&) const = default;
  constexpr std::size_t index() const { return value; }
};

// Canonical roster. Ids follow the published class table row order and are
// stable; extension taxonomies may only append classes after these.
namespace cls {
inline constexpr ClassId background{0};
inline constexpr ClassId stroma{1};
inline constexpr ClassId smooth_muscle{2};
inline constexpr ClassId epithelial_tissue{3};
inline constexpr ClassId leukocyte{4};
inline constexpr ClassId endothelial{5};
inline constexpr ClassId red_blood_cell{6};
inline constexpr ClassId lymphocyte{7};
inline constexpr ClassId plasma_cell{8};
inline constexpr ClassId myeloid_cell{9};
inline constexpr ClassId eosinophil{10};
inline constexpr ClassId neutrophil{11};
inline constexpr ClassId epithelial_cell_nucleus{12};
inline constexpr ClassId fibroblast{13};
inline constexpr ClassId mitotic_cell{14};
inline constexpr std::size_t kCanonicalCount = 15;
}  // namespace cls

inline constexpr std::size_t kHierarchyLevels = 4;

struct ClassInfo {
  ClassId id;
  std::string name;
  std::string abbrev;
  std::vector<std::string> aliases;
};

/// Closed class vocabulary plus the four-level nucleus classification
/// hierarchy. Immutable after construction.
class Taxonomy {
 public:
  /// The built-in roster (embedded copy of data/taxonomy.json).
  static const Taxonomy& builtin();
  static Taxonomy from_json(const nlohmann::json& doc);
  static Taxonomy from_file(const std::string& path);

  nlohmann::json to_json() const;

  std::size_t size() const { return classes_.size(); }
  bool valid(ClassId c) const { return c.index() < classes_.size(); }

  /// Case-insensitive lookup by name, abbreviation or alias. Spaces and
  /// hyphens are treated as underscores. Throws a usage error listing the
  /// vocabulary when the name is unknown.
  ClassId resolve(std::string_view name) const;
  std::optional<ClassId> find(std::string_view name) const;

  const std::string& name_of(ClassId c) const;
  const std::string& abbrev_of(ClassId c) const;
  const std::vector<ClassInfo>& classes() const { return classes_; }

  /// Hierarchy level (1..4) containing `c`, or nullopt for remainder classes.
  std::optional<int> level_of(ClassId c) const;
  /// Classes of a level (1-based), in tie-break order.
  std::span<const ClassId> level(int level) const;
  const std::array<std::vector<ClassId>, kHierarchyLevels>& hierarchy() const { return levels_; }

  std::string vocabulary_listing() const;

 private:
  std::vector<ClassInfo> classes_;
  std::array<std::vector<ClassId>, kHierarchyLevels> levels_;
};

/// Total map from taxonomy classes to evaluation classes (or `unmapped`).
/// Evaluation classes live in the same id space and always map to
/// themselves, so applying the map twice equals applying it once.
class ClassMap {
 public:
  /// Identity over the taxonomy.
  explicit ClassMap(const Taxonomy& tax);

  /// JSON document: {"default": "identity"|"unmapped",
  ///                 "map": {"<source>": "<target>"|null, ...}}.
  static ClassMap from_json(const nlohmann::json& doc, const Taxonomy& tax);
  static ClassMap from_file(const std::string& path, const Taxonomy& tax);

  std::optional<ClassId> apply(ClassId c) const;
  void set(ClassId source, std::optional<ClassId> target);

  /// Distinct evaluation classes, ascending.
  std::vector<ClassId> targets() const;
  std::size_t size() const { return map_.size(); }

 private:
  void check_idempotent() const;

  std::vector<std::optional<ClassId>> map_;
};

}  // namespace tmeseg
