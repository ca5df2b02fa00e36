#include "commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/counting.hpp"
#include "tmeseg/io.hpp"
#include "tmeseg/metrics.hpp"
#include "tmeseg/parallel.hpp"
#include "tmeseg/postprocess.hpp"
#include "tmeseg/testkit/synth.hpp"
#include "tmeseg/tiling.hpp"
#include "tmeseg/tme.hpp"

namespace tmeseg::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const Taxonomy& tax() { return Taxonomy::builtin(); }

std::string to_string(CandidateOutcome o) {
  switch (o) {
    case CandidateOutcome::accepted: return "accepted";
    case CandidateOutcome::low_score: return "low_score";
    case CandidateOutcome::dark: return "dark";
    case CandidateOutcome::no_contour: return "no_contour";
    case CandidateOutcome::no_epithelial_overlap: return "no_epithelial_overlap";
  }
  return "?";
}

std::string to_string(FallbackRule f) {
  switch (f) {
    case FallbackRule::none: return "none";
    case FallbackRule::level1_epithelium: return "level1_epithelium";
    case FallbackRule::epithelial_tissue: return "epithelial_tissue";
    case FallbackRule::connective_in_stroma: return "connective_in_stroma";
  }
  return "?";
}

json class_json(const std::optional<ClassId>& c) { return c ? json(tax().name_of(*c)) : json(nullptr); }

// Semantic label record of a mask file: "semantic" when present, else the
// only u8 record.
const StackRecord& mask_record(const std::vector<StackRecord>& recs, const std::string& path) {
  if (const auto* r = find_record_opt(recs, "semantic")) return *r;
  const StackRecord* found = nullptr;
  for (const auto& r : recs) {
    if (r.dtype() == DType::u8 && r.channels.size() == 1) {
      if (found) throw data_error(path + ": several label records and none named 'semantic'");
      found = &r;
    }
  }
  if (!found) throw data_error(path + ": no label record");
  return *found;
}

const StackRecord& first_of(const std::vector<StackRecord>& recs, std::initializer_list<const char*> names,
                            DType dtype, const std::string& path) {
  for (const char* n : names) {
    if (const auto* r = find_record_opt(recs, n)) return *r;
  }
  for (const auto& r : recs) {
    if (r.dtype() == dtype) return r;
  }
  throw data_error(fmt::format("{}: no {} record", path, to_string(dtype)));
}

void write_json(const json& doc, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << doc.dump(2) << '\n';
  } else {
    write_file(path, doc.dump(2) + "\n");
  }
}

// Writes the provenance record to --provenance, or next to `primary`.
// Returns the document so reports can embed it.
json emit_provenance(const Common& c, const std::string& command, const RunConfig& cfg,
                     const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                     const std::string& primary) {
  json doc = provenance(command, cfg, inputs, outputs);
  std::string path = c.provenance_path;
  if (path.empty() && !primary.empty() && primary != "-") path = primary + ".prov.json";
  if (!path.empty()) write_file(path, doc.dump(2) + "\n");
  return doc;
}

std::vector<ClassId> resolve_all(const std::vector<std::string>& names) {
  std::vector<ClassId> out;
  for (const auto& n : names) out.push_back(tax().resolve(n));
  return out;
}

}  // namespace

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.workers > 0) {
    cfg.aggregator.workers = c.workers;
  } else if (const char* env = std::getenv("TMESEG_WORKERS"); env && *env) {
    cfg.aggregator.workers = resolve_workers(0);
  }
  cfg.validate();
  return cfg;
}

int run_aggregate(const Common& c, const AggregateArgs& a) {
  const RunConfig cfg = load_config(c);
  const auto recs = load_stacks(a.bundle);
  TeacherBundle b = bundle_from_records(recs);
  b.validate();
  std::optional<double> mpp = find_record(recs, "he").mpp;
  if (a.downscale || cfg.downscale_2x) {
    b = downscale_2x(b);
    if (mpp) *mpp *= 2.0;
  }

  AggregationResult r;
  std::size_t windows = 1;
  if (a.tiled || cfg.tiled) {
    const ThresholdScope scope = a.global_threshold ? ThresholdScope::global : cfg.threshold_scope;
    auto t = aggregate_tiled(b, cfg.tiles, cfg.aggregator, scope);
    windows = t.windows.size();
    r = std::move(t.result);
  } else {
    // A single frame has one threshold anyway; --global-threshold only matters when tiling.
    r = aggregate(b, cfg.aggregator);
  }

  auto out = result_records(r);
  for (auto& rec : out) rec.mpp = mpp;
  save_stacks(a.out, out);

  std::vector<std::string> outputs{a.out};
  if (!a.report.empty()) outputs.push_back(a.report);
  const json prov = emit_provenance(c, "aggregate", cfg, {a.bundle}, outputs, a.out);

  std::size_t undefined = 0, mitotic = 0;
  for (const auto& [id, d] : r.decisions) {
    undefined += !d.final_class.has_value();
    mitotic += d.mitotic;
  }
  if (!a.report.empty()) {
    json nuclei = json::array();
    for (const auto& [id, d] : r.decisions) {
      nuclei.push_back({{"id", id},
                        {"class", class_json(d.final_class)},
                        {"hierarchy_class", class_json(d.hierarchy.cls)},
                        {"fallback", to_string(d.fallback)},
                        {"mitotic", d.mitotic},
                        {"undefined_votes", d.hierarchy.undefined_votes}});
    }
    json cands = json::array();
    for (std::size_t i = 0; i < b.mitosis_candidates.size(); ++i) {
      const auto& mc = b.mitosis_candidates[i];
      cands.push_back({{"x", mc.x}, {"y", mc.y}, {"score", mc.score}, {"outcome", to_string(r.mitosis.outcomes[i])}});
    }
    write_json({{"schema_version", 1},
                {"width", b.width()},
                {"height", b.height()},
                {"windows", windows},
                {"background_threshold", r.background_threshold},
                {"mitosis_region_count", r.mitosis.region_count},
                {"nuclei", nuclei},
                {"candidates", cands},
                {"provenance", prov}},
               a.report);
  }
  fmt::print("aggregate: {}x{}, {} nuclei ({} undefined, {} mitotic), {} mitosis region(s) -> {}\n", b.width(),
             b.height(), r.decisions.size(), undefined, mitotic, r.mitosis.region_count, a.out);
  return 0;
}

int run_postprocess(const Common& c, const PostprocessArgs& a) {
  const RunConfig cfg = load_config(c);
  const auto recs = load_stacks(a.logits);
  const StackRecord& lr = first_of(recs, {"student_logits", "logits"}, DType::f32, a.logits);
  const LogitStack s = to_logit_stack(lr);
  const int workers = resolve_workers(cfg.aggregator.workers);

  std::vector<StackRecord> out;
  std::vector<std::string> inputs{a.logits};
  if (a.mode == "force") {
    out.push_back(to_record(force_mode(s, {}, tax(), workers), "semantic"));
  } else {
    if (a.nuclei.empty()) throw usage_error("postprocess --mode assign needs --nuclei");
    inputs.push_back(a.nuclei);
    const auto nrecs = load_stacks(a.nuclei);
    const InstanceMap nuclei = to_instances(first_of(nrecs, {"nuclei", "instances"}, DType::u32, a.nuclei));
    const auto r = assign_nuclei(s, nuclei, {}, tax(), workers);
    std::map<std::uint32_t, std::optional<ClassId>> classes(r.nucleus_class.begin(), r.nucleus_class.end());
    out.push_back(to_record(r.labels, "semantic"));
    out.push_back(to_record(nuclei, "instances", &classes));
  }
  for (auto& rec : out) rec.mpp = lr.mpp;
  save_stacks(a.out, out);
  emit_provenance(c, "postprocess", cfg, inputs, {a.out}, a.out);
  fmt::print("postprocess: {} mode, {}x{} -> {}\n", a.mode, s.width(), s.height(), a.out);
  return 0;
}

int run_evaluate(const Common& c, const EvaluateArgs& a) {
  const RunConfig cfg = load_config(c);
  const auto gt = load_stacks(a.gt);
  const auto pred_recs = load_stacks(a.pred);
  const LabelRaster pred = to_labels(mask_record(pred_recs, a.pred));
  const ClassMap map = a.map.empty() ? ClassMap(tax()) : ClassMap::from_file(a.map, tax());

  json report{{"schema_version", 1}};
  std::string tables;
  bool any = false;
  if (const auto* inst = find_record_opt(gt, "instances")) {
    const InstanceMap gt_inst = to_instances(*inst);
    const auto scores = evaluate_instances(gt_inst, instance_classes(*inst), pred, map);
    report["instance"] = to_json(scores);
    tables += "Per-nucleus MCC\n" + format_table(scores) + "\n";
    any = true;
  }
  if (const auto* sem = find_record_opt(gt, "semantic")) {
    std::vector<ClassId> classes = a.semantic_classes.empty() ? StudentClassSets{}.tissue_classes
                                                              : resolve_all(a.semantic_classes);
    const auto scores = evaluate_semantic(to_labels(*sem), pred, classes);
    report["semantic"] = to_json(scores);
    tables += "Per-class Dice / IoU\n" + format_table(scores);
    any = true;
  }
  if (!any) throw data_error(a.gt + ": ground truth needs an 'instances' or 'semantic' record");

  std::vector<std::string> inputs{a.gt, a.pred};
  if (!a.map.empty()) inputs.push_back(a.map);
  report["provenance"] = emit_provenance(c, "evaluate", cfg, inputs, a.out.empty() ? std::vector<std::string>{}
                                                                                    : std::vector{a.out}, a.out);
  write_json(report, a.out);
  (a.out.empty() || a.out == "-" ? std::cerr : std::cout) << tables;
  return 0;
}

int run_count(const Common& c, const CountArgs& a) {
  const RunConfig cfg = load_config(c);
  std::vector<std::string> inputs;

  if (!a.fit.empty()) {
    inputs.push_back(a.fit);
    json doc;
    try {
      doc = json::parse(read_file(a.fit));
    } catch (const json::exception& e) {
      throw data_error(a.fit + ": " + e.what());
    }
    CalibrationTable table;
    auto& row = table[a.dataset.empty() ? "default" : a.dataset];
    for (const auto& [name, pairs] : doc.items()) {
      std::vector<AreaCountPair> p;
      try {
        for (const auto& pr : pairs) p.push_back({pr.at(0).get<double>(), pr.at(1).get<double>()});
      } catch (const json::exception& e) {
        throw data_error(fmt::format("{}: pairs for '{}' must be [area, count]: {}", a.fit, name, e.what()));
      }
      row[tax().resolve(name)] = calibrate(p);
    }
    json out = to_json(table);
    out["provenance"] = emit_provenance(c, "count", cfg, inputs, {}, a.out);
    write_json(out, a.out);
    return 0;
  }

  if (a.mask.empty()) throw usage_error("count needs --mask or --fit");
  inputs.push_back(a.mask);
  const auto recs = load_stacks(a.mask);
  const LabelRaster mask = to_labels(mask_record(recs, a.mask));

  std::map<ClassId, double> mean_area;
  if (!a.calibration.empty()) {
    inputs.push_back(a.calibration);
    const auto table = calibration_table_from_json(json::parse(read_file(a.calibration)));
    const std::string ds = a.dataset.empty() && table.size() == 1 ? table.begin()->first : a.dataset;
    const auto it = table.find(ds);
    if (it == table.end()) throw usage_error("calibration has no dataset '" + ds + "'");
    for (const auto& [cls, cal] : it->second) mean_area[cls] = cal.mean_area_per_cell;
  }
  for (const auto& spec : a.mean_areas) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw usage_error("--mean-area expects class=pixels, got '" + spec + "'");
    double v = 0;
    try {
      v = std::stod(spec.substr(eq + 1));
    } catch (const std::exception&) {
      throw usage_error("--mean-area: bad number in '" + spec + "'");
    }
    mean_area[tax().resolve(spec.substr(0, eq))] = v;
  }

  const std::vector<ClassId> classes =
      a.classes.empty() ? StudentClassSets{}.nucleus_classes : resolve_all(a.classes);
  json rows = json::array();
  for (ClassId cls : classes) {
    const auto it = mean_area.find(cls);
    const auto rec = count_record(mask, cls, it == mean_area.end() ? std::nullopt : std::optional(it->second),
                                  cfg.connectivity);
    json row{{"class", tax().name_of(cls)},
             {"pixel_area", rec.pixel_area},
             {"component_count", rec.component_count},
             {"mean_area_per_cell", nullptr},
             {"estimated_count", nullptr}};
    if (rec.mean_area_per_cell) {
      row["mean_area_per_cell"] = *rec.mean_area_per_cell;
      row["estimated_count"] = estimate_count_by_area(mask, cls, *rec.mean_area_per_cell);
    }
    rows.push_back(std::move(row));
  }
  json out{{"schema_version", 1},
           {"connectivity", static_cast<int>(cfg.connectivity)},
           {"counts", rows},
           {"provenance", emit_provenance(c, "count", cfg, inputs, {}, a.out)}};
  write_json(out, a.out);
  return 0;
}

int run_tme_slide(const Common& c, const TmeSlideArgs& a) {
  const RunConfig cfg = load_config(c);
  const auto recs = load_stacks(a.mask);
  const StackRecord& rec = mask_record(recs, a.mask);
  const auto mpp = a.mpp ? a.mpp : rec.mpp;
  if (!mpp) throw usage_error(a.mask + " carries no mpp; pass --mpp");
  const auto m = slide_metrics(to_labels(rec), *mpp, a.margin_um.value_or(cfg.margin_um), default_cell_groups(),
                               resolve_workers(cfg.aggregator.workers));
  json out = to_json(m);
  out["provenance"] = emit_provenance(c, "tme slide", cfg, {a.mask}, {}, a.out);
  write_json(out, a.out);
  return 0;
}

int run_tme_assoc(const Common& c, const TmeAssocArgs& a) {
  const RunConfig cfg = load_config(c);
  json manifest;
  try {
    manifest = json::parse(read_file(a.manifest));
  } catch (const json::exception& e) {
    throw data_error(a.manifest + ": " + e.what());
  }
  const fs::path base = fs::path(a.manifest).parent_path();
  std::vector<std::string> inputs{a.manifest};
  std::vector<CaseRecord> cases;
  std::set<std::string> all_genes;
  try {
    for (const auto& entry : manifest.at("cases")) {
      std::map<std::string, bool> mutated;
      const json flags = entry.value("mutations", json::object());
      for (const auto& [gene, flag] : flags.items()) {
        mutated[gene] = flag.get<bool>();
        all_genes.insert(gene);
      }
      const std::string id = entry.at("case_id").get<std::string>();
      if (entry.contains("metrics")) {
        CaseRecord cr{id, {}, mutated};
        for (const auto& [name, v] : entry["metrics"].items()) {
          cr.metrics[name] = v.is_null() ? std::nullopt : std::optional(v.get<double>());
        }
        cases.push_back(std::move(cr));
        continue;
      }
      std::vector<SlideMetrics> slides;
      for (const auto& s : entry.at("slides")) {
        const std::string path = (base / s.at("mask").get<std::string>()).string();
        inputs.push_back(path);
        const auto recs = load_stacks(path);
        const StackRecord& rec = mask_record(recs, path);
        const auto mpp = s.contains("mpp") ? std::optional(s["mpp"].get<double>()) : rec.mpp;
        if (!mpp) throw data_error(path + ": no mpp in the manifest or the record");
        slides.push_back(slide_metrics(to_labels(rec), *mpp, cfg.margin_um));
      }
      cases.push_back(make_case(id, slides, mutated));
    }
  } catch (const json::exception& e) {
    throw data_error(a.manifest + ": " + e.what());
  }

  const std::vector<std::string> genes = a.genes.empty() ? std::vector<std::string>(all_genes.begin(), all_genes.end())
                                                         : a.genes;
  const auto table = association_table(cases, genes, {}, a.min_group);
  json out = to_json(table);
  out["cases"] = cases.size();
  std::vector<std::string> outputs;
  if (!a.csv.empty()) {
    write_file(a.csv, to_csv(table));
    outputs.push_back(a.csv);
  }
  out["provenance"] = emit_provenance(c, "tme assoc", cfg, inputs, outputs, a.out);
  write_json(out, a.out);
  return 0;
}

int run_synth(const Common& c, const SynthArgs& a) {
  const RunConfig cfg = load_config(c);
  std::vector<StackRecord> bundle;
  std::vector<std::string> outputs{a.out};
  if (!a.size.empty()) {
    int w = 0, h = 0;
    if (std::sscanf(a.size.c_str(), "%dx%d", &w, &h) != 2 || w < 16 || h < 16) {
      throw usage_error("--size expects WxH with both sides >= 16, got '" + a.size + "'");
    }
    if (!a.truth.empty() || !a.student.empty()) {
      throw usage_error("--truth and --student need a random scene (drop --size)");
    }
    bundle = bundle_records(testkit::synth_large(w, h, a.seed));
  } else {
    const auto f = testkit::synth_fixture(testkit::random_scene(a.seed), cfg.aggregator);
    bundle = bundle_records(f.bundle);
    if (!a.truth.empty()) {
      std::map<std::uint32_t, std::optional<ClassId>> classes(f.truth.classes.begin(), f.truth.classes.end());
      std::vector<StackRecord> truth{to_record(f.truth.semantic, "semantic"), to_record(f.truth.tissue, "tissue"),
                                     to_record(f.bundle.nuclei, "instances", &classes)};
      StackRecord mask{"mitosis_mask", f.truth.mitosis_mask.width(), f.truth.mitosis_mask.height(), {"mask"},
                       a.mpp, std::nullopt, json::object(),
                       std::vector<std::uint8_t>(f.truth.mitosis_mask.pixels().begin(),
                                                 f.truth.mitosis_mask.pixels().end())};
      truth.push_back(std::move(mask));
      for (auto& r : truth) r.mpp = a.mpp;
      save_stacks(a.truth, truth);
      outputs.push_back(a.truth);
    }
    if (!a.student.empty()) {
      // Noisy logits whose per-pixel winner is the reference semantic class.
      testkit::Rng rng(a.seed ^ 0x5eedULL);
      std::vector<ClassId> all;
      for (const auto& info : tax().classes()) all.push_back(info.id);
      LogitStack s(f.truth.semantic.width(), f.truth.semantic.height(), all);
      for (std::size_t ch = 0; ch < all.size(); ++ch) {
        auto& plane = s.plane_at(ch);
        for (std::size_t i = 0; i < plane.size(); ++i) {
          plane[i] = f.truth.semantic[i] == all[ch] ? static_cast<float>(rng.uniform(1.0, 3.0))
                                                    : static_cast<float>(rng.uniform(-3.0, 0.5));
        }
      }
      std::vector<StackRecord> student{to_record(s, "student_logits"), to_record(f.bundle.nuclei, "nuclei")};
      for (auto& r : student) r.mpp = a.mpp;
      save_stacks(a.student, student);
      outputs.push_back(a.student);
    }
  }
  for (auto& r : bundle) r.mpp = a.mpp;
  save_stacks(a.out, bundle);
  emit_provenance(c, "synth", cfg, {}, outputs, a.out);
  fmt::print("synth: seed {}, {}x{} -> {}\n", a.seed, bundle.front().width, bundle.front().height, a.out);
  return 0;
}

int run_info(const Common& c, const InfoArgs& a) {
  (void)c;
  if (a.files.empty()) {
    std::cout << json{{"tool", "tmeseg"}, {"version", version()}, {"taxonomy", tax().to_json()}}.dump(2) << '\n';
    return 0;
  }
  json out = json::array();
  for (const auto& path : a.files) {
    json recs = json::array();
    for (const auto& r : load_stacks(path)) {
      json j{{"name", r.name},
             {"width", r.width},
             {"height", r.height},
             {"dtype", to_string(r.dtype())},
             {"channels", r.channels}};
      if (r.mpp) j["mpp"] = *r.mpp;
      if (r.halo) j["halo"] = *r.halo;
      json keys = json::array();
      for (const auto& [k, v] : r.attrs.items()) keys.push_back(k);
      j["attrs"] = keys;
      recs.push_back(std::move(j));
    }
    out.push_back({{"path", path}, {"sha256", sha256_file(path)}, {"records", recs}});
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace tmeseg::cli
