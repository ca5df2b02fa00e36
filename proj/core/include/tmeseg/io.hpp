#pragma once

// TMEF1 container.
//
// A .tmef file is one or more records back to back. Each record is
//
//   uint32 little-endian  header length N
//   N bytes               UTF-8 JSON header
//   payload               channel planes, little-endian, row-major,
//                         concatenated in header channel order
//
// Header fields: "magic": "TMEF1", "width", "height", "dtype" ("f32", "u8" or
// "u32"), "channels": [names], and optionally "mpp", "halo", "name" and
// "attrs" (free-form object). Payload length is width*height*channels*size.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/raster.hpp"
#include "tmeseg/taxonomy.hpp"

namespace tmeseg {

enum class DType { f32, u8, u32 };

std::string to_string(DType d);
std::size_t dtype_size(DType d);

struct StackRecord {
  std::string name;
  int width = 0;
  int height = 0;
  std::vector<std::string> channels;
  std::optional<double> mpp;
  std::optional<int> halo;
  nlohmann::json attrs = nlohmann::json::object();
  std::variant<std::vector<float>, std::vector<std::uint8_t>, std::vector<std::uint32_t>> data;

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::size_t plane_size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool operator==(const StackRecord&) const = default;
};

std::string encode_records(std::span<const StackRecord> records);
std::vector<StackRecord> decode_records(std::string_view bytes);

void save_stacks(const std::string& path, std::span<const StackRecord> records);
std::vector<StackRecord> load_stacks(const std::string& path);
void save_stack(const StackRecord& record, const std::string& path);
StackRecord load_stack(const std::string& path);

/// The record named `name`, or a data error.
const StackRecord& find_record(std::span<const StackRecord> records, const std::string& name);
const StackRecord* find_record_opt(std::span<const StackRecord> records, const std::string& name);

// Typed conversions. Logit channel names must resolve against the taxonomy.
StackRecord to_record(const LogitStack& s, const std::string& name, const Taxonomy& tax = Taxonomy::builtin());
LogitStack to_logit_stack(const StackRecord& r, const Taxonomy& tax = Taxonomy::builtin());
StackRecord to_record(const RgbTile& img, const std::string& name);
RgbTile to_rgb(const StackRecord& r);
StackRecord to_record(const LabelRaster& labels, const std::string& name);
LabelRaster to_labels(const StackRecord& r, const Taxonomy& tax = Taxonomy::builtin());
/// Instance classes, when given, are stored per instance in attrs.
StackRecord to_record(const InstanceMap& m, const std::string& name,
                      const std::map<std::uint32_t, std::optional<ClassId>>* classes = nullptr,
                      const Taxonomy& tax = Taxonomy::builtin());
InstanceMap to_instances(const StackRecord& r);
/// Per-instance classes stored by to_record; ids without a class are absent.
std::map<std::uint32_t, ClassId> instance_classes(const StackRecord& r, const Taxonomy& tax = Taxonomy::builtin());

// Bundles: records "he", "tissue_logits", "cell_logits", "nuclei"; the mitosis
// candidates live in the "he" record attrs.
std::vector<StackRecord> bundle_records(const TeacherBundle& b, const Taxonomy& tax = Taxonomy::builtin());
TeacherBundle bundle_from_records(std::span<const StackRecord> records, const Taxonomy& tax = Taxonomy::builtin());
void save_bundle(const std::string& path, const TeacherBundle& b, const Taxonomy& tax = Taxonomy::builtin());
TeacherBundle load_bundle(const std::string& path, const Taxonomy& tax = Taxonomy::builtin());

// Aggregation output: "semantic" (u8), "instances" (u32, with classes) and
// "mitosis_regions" (u32).
std::vector<StackRecord> result_records(const AggregationResult& r, const Taxonomy& tax = Taxonomy::builtin());

/// Hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace tmeseg
