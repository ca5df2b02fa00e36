#include "tmeseg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace tmeseg {

namespace {

constexpr std::string_view kMagic = "TMEF1";
constexpr std::uint32_t kMaxHeader = 64u << 20;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <class T>
void append_le(std::string& out, const std::vector<T>& v) {
  const std::size_t off = out.size();
  out.resize(off + v.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + off, v.data(), v.size() * sizeof(T));
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T x = byteswap_if_big(v[i]);
      std::memcpy(out.data() + off + i * sizeof(T), &x, sizeof(T));
    }
  }
}

template <class T>
std::vector<T> read_le(std::string_view bytes) {
  std::vector<T> v(bytes.size() / sizeof(T));
  std::memcpy(v.data(), bytes.data(), v.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& x : v) x = byteswap_if_big(x);
  }
  return v;
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "u8") return DType::u8;
  if (s == "u32") return DType::u32;
  throw data_error("TMEF: unknown dtype '" + s + "'");
}

template <class T>
const std::vector<T>& payload_as(const StackRecord& r, const char* want) {
  if (const auto* v = std::get_if<std::vector<T>>(&r.data)) return *v;
  throw data_error("TMEF record '" + r.name + "': expected dtype " + want + ", got " + to_string(r.dtype()));
}

void check_dims(const StackRecord& r, std::size_t channels) {
  if (r.width < 1 || r.height < 1) throw data_error("TMEF record '" + r.name + "': empty extent");
  if (r.channels.size() != channels) {
    throw data_error(fmt::format("TMEF record '{}': expected {} channel(s), got {}", r.name, channels,
                                 r.channels.size()));
  }
}

}  // namespace

std::string to_string(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::u8: return "u8";
    case DType::u32: return "u32";
  }
  return "?";
}

std::size_t dtype_size(DType d) { return d == DType::u8 ? 1 : 4; }

std::string encode_records(std::span<const StackRecord> records) {
  std::string out;
  for (const auto& r : records) {
    const std::size_t expect = r.plane_size() * r.channels.size();
    const std::size_t have = std::visit([](const auto& v) { return v.size(); }, r.data);
    if (have != expect) {
      throw usage_error(fmt::format("TMEF record '{}': payload has {} values, header implies {}", r.name, have, expect));
    }
    nlohmann::json h{{"magic", kMagic},
                     {"width", r.width},
                     {"height", r.height},
                     {"dtype", to_string(r.dtype())},
                     {"channels", r.channels}};
    if (!r.name.empty()) h["name"] = r.name;
    if (r.mpp) h["mpp"] = *r.mpp;
    if (r.halo) h["halo"] = *r.halo;
    if (!r.attrs.empty()) h["attrs"] = r.attrs;
    const std::string header = h.dump();
    const auto len = byteswap_if_big(static_cast<std::uint32_t>(header.size()));
    out.append(reinterpret_cast<const char*>(&len), sizeof(len));
    out += header;
    std::visit([&](const auto& v) { append_le(out, v); }, r.data);
  }
  return out;
}

std::vector<StackRecord> decode_records(std::string_view bytes) {
  std::vector<StackRecord> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw data_error("TMEF: truncated record header length");
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + pos, 4);
    len = byteswap_if_big(len);
    pos += 4;
    if (len > kMaxHeader || len > bytes.size() - pos) throw data_error("TMEF: magic mismatch or truncated header");
    nlohmann::json h;
    try {
      h = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception&) {
      throw data_error("TMEF: magic mismatch (header is not TMEF1 JSON)");
    }
    pos += len;
    if (!h.is_object() || h.value("magic", std::string{}) != kMagic) throw data_error("TMEF: magic mismatch");

    StackRecord r;
    try {
      r.name = h.value("name", std::string{});
      r.width = h.at("width").get<int>();
      r.height = h.at("height").get<int>();
      r.channels = h.at("channels").get<std::vector<std::string>>();
      if (h.contains("mpp")) r.mpp = h["mpp"].get<double>();
      if (h.contains("halo")) r.halo = h["halo"].get<int>();
      if (h.contains("attrs")) r.attrs = h["attrs"];
    } catch (const nlohmann::json::exception& e) {
      throw data_error(std::string("TMEF: bad header: ") + e.what());
    }
    const DType dt = parse_dtype(h.value("dtype", std::string{}));
    if (r.width < 0 || r.height < 0) throw data_error("TMEF: negative extent");
    const std::size_t expect = r.plane_size() * r.channels.size() * dtype_size(dt);
    if (bytes.size() - pos < expect) {
      throw data_error(fmt::format("TMEF: truncated payload in record '{}': expected {} bytes, found {}", r.name,
                                   expect, bytes.size() - pos));
    }
    const auto payload = bytes.substr(pos, expect);
    pos += expect;
    switch (dt) {
      case DType::f32: {
        auto v = read_le<float>(payload);
        for (float x : v) {
          if (!std::isfinite(x)) throw data_error("TMEF: non-finite f32 value in record '" + r.name + "'");
        }
        r.data = std::move(v);
        break;
      }
      case DType::u8: r.data = read_le<std::uint8_t>(payload); break;
      case DType::u32: r.data = read_le<std::uint32_t>(payload); break;
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw data_error("TMEF: empty file");
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("write failed: " + path);
}

void save_stacks(const std::string& path, std::span<const StackRecord> records) {
  write_file(path, encode_records(records));
}

std::vector<StackRecord> load_stacks(const std::string& path) {
  try {
    return decode_records(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

void save_stack(const StackRecord& record, const std::string& path) {
  save_stacks(path, std::span<const StackRecord>(&record, 1));
}

StackRecord load_stack(const std::string& path) { return load_stacks(path).front(); }

const StackRecord* find_record_opt(std::span<const StackRecord> records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const StackRecord& find_record(std::span<const StackRecord> records, const std::string& name) {
  if (const auto* r = find_record_opt(records, name)) return *r;
  throw data_error("TMEF: no record named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Typed conversions

StackRecord to_record(const LogitStack& s, const std::string& name, const Taxonomy& tax) {
  StackRecord r;
  r.name = name;
  r.width = s.width();
  r.height = s.height();
  std::vector<float> v;
  v.reserve(r.plane_size() * s.channels().size());
  for (std::size_t i = 0; i < s.channels().size(); ++i) {
    r.channels.push_back(tax.name_of(s.channels()[i]));
    const auto p = s.plane_at(i).pixels();
    v.insert(v.end(), p.begin(), p.end());
  }
  r.data = std::move(v);
  return r;
}

LogitStack to_logit_stack(const StackRecord& r, const Taxonomy& tax) {
  const auto& v = payload_as<float>(r, "f32");
  std::vector<ClassId> ids;
  for (const auto& name : r.channels) {
    const auto c = tax.find(name);
    if (!c) throw data_error("logit channel '" + name + "' is not in the vocabulary: " + tax.vocabulary_listing());
    ids.push_back(*c);
  }
  LogitStack s(r.width, r.height, ids);
  const std::size_t n = r.plane_size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto dst = s.plane_at(i).pixels();
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * n), n, dst.begin());
  }
  return s;
}

StackRecord to_record(const RgbTile& img, const std::string& name) {
  StackRecord r;
  r.name = name;
  r.width = img.width();
  r.height = img.height();
  r.channels = {"r", "g", "b"};
  std::vector<std::uint8_t> v(3 * img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    v[i] = img[i].r;
    v[img.size() + i] = img[i].g;
    v[2 * img.size() + i] = img[i].b;
  }
  r.data = std::move(v);
  return r;
}

RgbTile to_rgb(const StackRecord& r) {
  check_dims(r, 3);
  const auto& v = payload_as<std::uint8_t>(r, "u8");
  RgbTile img(r.width, r.height);
  const std::size_t n = img.size();
  for (std::size_t i = 0; i < n; ++i) img[i] = Rgb{v[i], v[n + i], v[2 * n + i]};
  return img;
}

StackRecord to_record(const LabelRaster& labels, const std::string& name) {
  StackRecord r;
  r.name = name;
  r.width = labels.width();
  r.height = labels.height();
  r.channels = {"label"};
  std::vector<std::uint8_t> v(labels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = labels[i].value;
  r.data = std::move(v);
  return r;
}

LabelRaster to_labels(const StackRecord& r, const Taxonomy& tax) {
  check_dims(r, 1);
  const auto& v = payload_as<std::uint8_t>(r, "u8");
  LabelRaster out(r.width, r.height);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const ClassId c(v[i]);
    if (!tax.valid(c)) throw data_error(fmt::format("label raster '{}': invalid class id {}", r.name, v[i]));
    out[i] = c;
  }
  return out;
}

StackRecord to_record(const InstanceMap& m, const std::string& name,
                      const std::map<std::uint32_t, std::optional<ClassId>>* classes, const Taxonomy& tax) {
  StackRecord r;
  r.name = name;
  r.width = m.width();
  r.height = m.height();
  r.channels = {"instance_id"};
  const auto p = m.ids.pixels();
  r.data = std::vector<std::uint32_t>(p.begin(), p.end());
  auto inst = nlohmann::json::array();
  for (const auto& [id, a] : m.attrs) {
    nlohmann::json e{{"id", id}, {"teacher_type", to_string(a.teacher_type)}, {"pixel_count", a.pixel_count}};
    if (classes != nullptr) {
      const auto it = classes->find(id);
      e["class"] = (it != classes->end() && it->second) ? nlohmann::json(tax.name_of(*it->second)) : nlohmann::json();
    }
    inst.push_back(std::move(e));
  }
  r.attrs["instances"] = std::move(inst);
  return r;
}

InstanceMap to_instances(const StackRecord& r) {
  check_dims(r, 1);
  const auto& v = payload_as<std::uint32_t>(r, "u32");
  InstanceMap m(r.width, r.height);
  std::copy(v.begin(), v.end(), m.ids.pixels().begin());
  try {
    for (const auto& e : r.attrs.value("instances", nlohmann::json::array())) {
      const auto id = e.at("id").get<std::uint32_t>();
      if (id == 0) throw data_error("instance map: id 0 is reserved");
      m.attrs[id].teacher_type = parse_nucleus_type(e.value("teacher_type", std::string("none")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("instance attrs: ") + e.what());
  }
  const auto listed = m.attrs;
  m.refresh_attrs();
  for (const auto& [id, a] : listed) {
    if (!m.attrs.contains(id)) throw data_error("instance map: id " + std::to_string(id) + " has no pixels");
  }
  return m;
}

std::map<std::uint32_t, ClassId> instance_classes(const StackRecord& r, const Taxonomy& tax) {
  std::map<std::uint32_t, ClassId> out;
  for (const auto& e : r.attrs.value("instances", nlohmann::json::array())) {
    if (e.contains("class") && e["class"].is_string()) {
      out[e.at("id").get<std::uint32_t>()] = tax.resolve(e["class"].get<std::string>());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundles

std::vector<StackRecord> bundle_records(const TeacherBundle& b, const Taxonomy& tax) {
  std::vector<StackRecord> out;
  out.push_back(to_record(b.he, "he"));
  auto cands = nlohmann::json::array();
  for (const auto& c : b.mitosis_candidates) cands.push_back({{"x", c.x}, {"y", c.y}, {"score", c.score}});
  out.back().attrs["mitosis_candidates"] = std::move(cands);
  out.push_back(to_record(b.tissue_logits, "tissue_logits", tax));
  out.push_back(to_record(b.cell_logits, "cell_logits", tax));
  out.push_back(to_record(b.nuclei, "nuclei"));
  return out;
}

TeacherBundle bundle_from_records(std::span<const StackRecord> records, const Taxonomy& tax) {
  TeacherBundle b;
  const auto& he = find_record(records, "he");
  b.he = to_rgb(he);
  try {
    for (const auto& c : he.attrs.value("mitosis_candidates", nlohmann::json::array())) {
      b.mitosis_candidates.push_back({c.at("x").get<double>(), c.at("y").get<double>(), c.value("score", 1.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("mitosis candidates: ") + e.what());
  }
  b.tissue_logits = to_logit_stack(find_record(records, "tissue_logits"), tax);
  b.cell_logits = to_logit_stack(find_record(records, "cell_logits"), tax);
  b.nuclei = to_instances(find_record(records, "nuclei"));
  b.validate(tax);
  return b;
}

void save_bundle(const std::string& path, const TeacherBundle& b, const Taxonomy& tax) {
  save_stacks(path, bundle_records(b, tax));
}

TeacherBundle load_bundle(const std::string& path, const Taxonomy& tax) {
  const auto records = load_stacks(path);
  try {
    return bundle_from_records(records, tax);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::vector<StackRecord> result_records(const AggregationResult& r, const Taxonomy& tax) {
  std::vector<StackRecord> out;
  out.push_back(to_record(r.semantic, "semantic"));
  std::map<std::uint32_t, std::optional<ClassId>> classes;
  for (const auto& [id, d] : r.decisions) classes[id] = d.final_class;
  out.push_back(to_record(r.instances, "instances", &classes, tax));
  StackRecord regions;
  regions.name = "mitosis_regions";
  regions.width = r.mitosis.regions.width();
  regions.height = r.mitosis.regions.height();
  regions.channels = {"region_id"};
  const auto p = r.mitosis.regions.pixels();
  regions.data = std::vector<std::uint32_t>(p.begin(), p.end());
  regions.attrs["region_count"] = r.mitosis.region_count;
  out.push_back(std::move(regions));
  return out;
}

// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw data_error("sha256 failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

}  // namespace tmeseg
