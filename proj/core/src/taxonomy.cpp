#include "tmeseg/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "tmeseg/error.hpp"
#include "taxonomy_json.hpp"

namespace tmeseg {

namespace {

std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    if (ch == ' ' || ch == '-') {
      out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  return out;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": " + e.what());
  }
}

}  // namespace

const Taxonomy& Taxonomy::builtin() {
  static const Taxonomy tax = from_json(nlohmann::json::parse(detail::kEmbeddedTaxonomy));
  return tax;
}

Taxonomy Taxonomy::from_json(const nlohmann::json& doc) {
  Taxonomy tax;
  try {
    const auto& classes = doc.at("classes");
    if (classes.size() > 255) throw data_error("taxonomy: at most 255 classes");
    for (std::size_t i = 0; i < classes.size(); ++i) {
      const auto& c = classes[i];
      ClassInfo info;
      const auto id = c.at("id").get<int>();
      if (id != static_cast<int>(i)) {
        throw data_error("taxonomy: ids must be dense and in order, got " + std::to_string(id) +
                         " at position " + std::to_string(i));
      }
      info.id = ClassId(static_cast<std::uint8_t>(id));
      info.name = normalize(c.at("name").get<std::string>());
      info.abbrev = normalize(c.value("abbrev", std::string{}));
      for (const auto& a : c.value("aliases", nlohmann::json::array())) {
        info.aliases.push_back(normalize(a.get<std::string>()));
      }
      tax.classes_.push_back(std::move(info));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("taxonomy: ") + e.what());
  }

  // Every label spelling must be unique across the whole vocabulary.
  std::set<std::string> seen;
  for (const auto& c : tax.classes_) {
    for (const auto* s : {&c.name, &c.abbrev}) {
      if (s->empty()) continue;
      if (!seen.insert(*s).second) throw data_error("taxonomy: duplicate label '" + *s + "'");
    }
    for (const auto& a : c.aliases) {
      if (!seen.insert(a).second) throw data_error("taxonomy: duplicate label '" + a + "'");
    }
  }

  // The canonical roster is pinned so the pipeline's built-in ids stay valid.
  static const char* const kCanonical[cls::kCanonicalCount] = {
      "background", "stroma", "smooth_muscle", "epithelial_tissue", "leukocyte",
      "endothelial", "red_blood_cell", "lymphocyte", "plasma_cell", "myeloid_cell",
      "eosinophil", "neutrophil", "epithelial_cell_nucleus", "fibroblast", "mitotic_cell"};
  if (tax.classes_.size() < cls::kCanonicalCount) {
    throw data_error("taxonomy: the 15 canonical classes are required");
  }
  for (std::size_t i = 0; i < cls::kCanonicalCount; ++i) {
    if (tax.classes_[i].name != kCanonical[i]) {
      throw data_error("taxonomy: id " + std::to_string(i) + " must be '" + kCanonical[i] + "'");
    }
  }

  const auto levels = doc.value("hierarchy", nlohmann::json::array());
  if (levels.size() != kHierarchyLevels) throw data_error("taxonomy: hierarchy needs exactly 4 levels");
  std::set<ClassId> used;
  for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
    for (const auto& n : levels[l]) {
      const ClassId c = tax.resolve(n.get<std::string>());
      if (c == cls::background) throw data_error("taxonomy: background cannot be in the hierarchy");
      if (!used.insert(c).second) {
        throw data_error("taxonomy: class '" + tax.name_of(c) + "' appears in two hierarchy levels");
      }
      tax.levels_[l].push_back(c);
    }
    if (tax.levels_[l].empty()) throw data_error("taxonomy: empty hierarchy level");
  }
  return tax;
}

Taxonomy Taxonomy::from_file(const std::string& path) { return from_json(read_json_file(path)); }

nlohmann::json Taxonomy::to_json() const {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  auto& arr = doc["classes"] = nlohmann::json::array();
  for (const auto& c : classes_) {
    arr.push_back({{"id", c.id.value}, {"name", c.name}, {"abbrev", c.abbrev}, {"aliases", c.aliases}});
  }
  auto& h = doc["hierarchy"] = nlohmann::json::array();
  for (const auto& level : levels_) {
    auto names = nlohmann::json::array();
    for (ClassId c : level) names.push_back(name_of(c));
    h.push_back(std::move(names));
  }
  return doc;
}

std::optional<ClassId> Taxonomy::find(std::string_view name) const {
  const std::string key = normalize(name);
  for (const auto& c : classes_) {
    if (c.name == key || c.abbrev == key ||
        std::find(c.aliases.begin(), c.aliases.end(), key) != c.aliases.end()) {
      return c.id;
    }
  }
  return std::nullopt;
}

ClassId Taxonomy::resolve(std::string_view name) const {
  if (auto c = find(name)) return *c;
  throw usage_error("unknown class '" + std::string(name) + "'; vocabulary: " + vocabulary_listing());
}

const std::string& Taxonomy::name_of(ClassId c) const {
  if (!valid(c)) throw usage_error("invalid class id " + std::to_string(c.value));
  return classes_[c.index()].name;
}

const std::string& Taxonomy::abbrev_of(ClassId c) const {
  if (!valid(c)) throw usage_error("invalid class id " + std::to_string(c.value));
  return classes_[c.index()].abbrev;
}

std::optional<int> Taxonomy::level_of(ClassId c) const {
  for (std::size_t l = 0; l < kHierarchyLevels; ++l) {
    if (std::find(levels_[l].begin(), levels_[l].end(), c) != levels_[l].end()) {
      return static_cast<int>(l + 1);
    }
  }
  return std::nullopt;
}

std::span<const ClassId> Taxonomy::level(int level) const {
  if (level < 1 || level > static_cast<int>(kHierarchyLevels)) {
    throw usage_error("hierarchy level must be 1..4");
  }
  return levels_[static_cast<std::size_t>(level - 1)];
}

std::string Taxonomy::vocabulary_listing() const {
  std::string out;
  for (const auto& c : classes_) {
    if (!out.empty()) out += ", ";
    out += c.name;
    if (!c.abbrev.empty()) out += " (" + c.abbrev + ")";
  }
  return out;
}

// ---------------------------------------------------------------------------

ClassMap::ClassMap(const Taxonomy& tax) : map_(tax.size()) {
  for (std::size_t i = 0; i < map_.size(); ++i) map_[i] = ClassId(static_cast<std::uint8_t>(i));
}

ClassMap ClassMap::from_json(const nlohmann::json& doc, const Taxonomy& tax) {
  ClassMap m(tax);
  std::set<ClassId> explicit_src;
  try {
    const auto def = doc.value("default", std::string("identity"));
    if (def == "unmapped") {
      std::fill(m.map_.begin(), m.map_.end(), std::nullopt);
    } else if (def != "identity") {
      throw data_error("class map: default must be 'identity' or 'unmapped'");
    }
    const auto entries = doc.value("map", nlohmann::json::object());
    for (const auto& [src, dst] : entries.items()) {
      const ClassId s = tax.resolve(src);
      explicit_src.insert(s);
      if (dst.is_null()) {
        m.set(s, std::nullopt);
      } else {
        m.set(s, tax.resolve(dst.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("class map: ") + e.what());
  }
  // Targets not listed explicitly map to themselves.
  for (std::size_t i = 0; i < m.map_.size(); ++i) {
    if (m.map_[i]) {
      auto& t = m.map_[m.map_[i]->index()];
      if (!t && !explicit_src.contains(*m.map_[i])) t = m.map_[i];
    }
  }
  m.check_idempotent();
  return m;
}

ClassMap ClassMap::from_file(const std::string& path, const Taxonomy& tax) {
  return from_json(read_json_file(path), tax);
}

std::optional<ClassId> ClassMap::apply(ClassId c) const {
  if (c.index() >= map_.size()) throw usage_error("class map: invalid class id " + std::to_string(c.value));
  return map_[c.index()];
}

void ClassMap::set(ClassId source, std::optional<ClassId> target) {
  if (source.index() >= map_.size() || (target && target->index() >= map_.size())) {
    throw usage_error("class map: class id out of range");
  }
  map_[source.index()] = target;
}

std::vector<ClassId> ClassMap::targets() const {
  std::set<ClassId> t;
  for (const auto& m : map_) {
    if (m) t.insert(*m);
  }
  return {t.begin(), t.end()};
}

void ClassMap::check_idempotent() const {
  for (std::size_t i = 0; i < map_.size(); ++i) {
    if (!map_[i]) continue;
    const auto& again = map_[map_[i]->index()];
    if (!again || *again != *map_[i]) {
      throw data_error("class map: evaluation class id " + std::to_string(map_[i]->value) +
                       " must map to itself");
    }
  }
}

}  // namespace tmeseg
