#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "commands.hpp"
#include "tmeseg/error.hpp"

namespace {

constexpr const char* kSynopsis =
    "usage: tmeseg <command> [options]\n"
    "\n"
    "commands:\n"
    "  aggregate    teacher bundle -> semantic mask, instances, mitosis regions\n"
    "  postprocess  student logits -> labels (force mode or nucleus assignment)\n"
    "  evaluate     per-nucleus MCC and per-class Dice/IoU against ground truth\n"
    "  count        component and area-based cell counts; calibration fits\n"
    "  tme          slide metrics (tme slide) and mutation association (tme assoc)\n"
    "  synth        write a seeded synthetic teacher bundle\n"
    "  info         describe .tmef files, or print version and taxonomy\n"
    "\n"
    "run 'tmeseg <command> --help' for options. Exit status: 0 ok, 1 usage error, 2 data error.\n";

}  // namespace

int main(int argc, char** argv) {
  using namespace tmeseg::cli;

  CLI::App app{"Teacher-label aggregation and tumour-microenvironment analytics", "tmeseg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tmeseg::version()));

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "RunConfig JSON");
    sub->add_option("--workers", common.workers, "Worker threads (overrides config and TMESEG_WORKERS)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--provenance", common.provenance_path,
                    "Provenance JSON path (default: next to the primary output)");
  };

  AggregateArgs agg;
  auto* s_agg = app.add_subcommand("aggregate", "Aggregate teacher outputs into a training mask");
  s_agg->add_option("--bundle", agg.bundle, "Teacher bundle (.tmef)")->required();
  s_agg->add_option("--out", agg.out, "Output mask (.tmef)")->required();
  s_agg->add_option("--report", agg.report, "Per-nucleus and per-candidate JSON report");
  s_agg->add_flag("--tiled", agg.tiled, "Aggregate in 384/320 windows (see config 'tiling')");
  s_agg->add_flag("--global-threshold", agg.global_threshold, "One background threshold for the whole image");
  s_agg->add_flag("--downscale-2x", agg.downscale, "Halve the bundle resolution first");
  add_common(s_agg);

  PostprocessArgs post;
  auto* s_post = app.add_subcommand("postprocess", "Turn student logits into labels");
  s_post->add_option("--logits", post.logits, "Student logits (.tmef, all 15 classes)")->required();
  s_post->add_option("--nuclei", post.nuclei, "Nucleus instances (.tmef), required for --mode assign");
  s_post->add_option("--mode", post.mode, "force | assign")->check(CLI::IsMember({"force", "assign"}));
  s_post->add_option("--out", post.out, "Output labels (.tmef)")->required();
  add_common(s_post);

  EvaluateArgs ev;
  auto* s_eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
  s_eval->add_option("--gt", ev.gt, "Ground truth (.tmef with 'instances' and/or 'semantic')")->required();
  s_eval->add_option("--pred", ev.pred, "Prediction (.tmef with 'semantic')")->required();
  s_eval->add_option("--map", ev.map, "Class map JSON (default: identity)");
  s_eval->add_option("--semantic-classes", ev.semantic_classes, "Classes for Dice/IoU (default: tissue classes)");
  s_eval->add_option("--out", ev.out, "JSON report path (default: stdout)");
  add_common(s_eval);

  CountArgs cnt;
  auto* s_count = app.add_subcommand("count", "Cell counts from a semantic mask, or fit a calibration");
  s_count->add_option("--mask", cnt.mask, "Semantic mask (.tmef)");
  s_count->add_option("--classes", cnt.classes, "Classes to count (default: every nucleus class)");
  s_count->add_option("--mean-area", cnt.mean_areas, "class=pixels per cell, for area estimates");
  s_count->add_option("--calibration", cnt.calibration, "Calibration table JSON supplying mean areas");
  s_count->add_option("--dataset", cnt.dataset, "Dataset id within the calibration table");
  s_count->add_option("--fit", cnt.fit, "Pairs JSON {class: [[area, count], ...]} to calibrate");
  s_count->add_option("--out", cnt.out, "JSON report path (default: stdout)");
  add_common(s_count);

  auto* s_tme = app.add_subcommand("tme", "Tumour-microenvironment analytics");
  s_tme->require_subcommand(1);
  TmeSlideArgs slide;
  auto* s_slide = s_tme->add_subcommand("slide", "Ratios and margin densities for one slide mask");
  s_slide->add_option("--mask", slide.mask, "Semantic mask (.tmef)")->required();
  s_slide->add_option("--mpp", slide.mpp, "Microns per pixel (default: from the record header)");
  s_slide->add_option("--margin-um", slide.margin_um, "Margin band width in microns (default: config, 50)");
  s_slide->add_option("--out", slide.out, "JSON report path (default: stdout)");
  add_common(s_slide);
  TmeAssocArgs assoc;
  auto* s_assoc = s_tme->add_subcommand("assoc", "Mann-Whitney association of metrics with mutations");
  s_assoc->add_option("--manifest", assoc.manifest, "Cohort manifest JSON")->required();
  s_assoc->add_option("--genes", assoc.genes, "Genes to test (default: every gene in the manifest)");
  s_assoc->add_option("--min-group", assoc.min_group, "Smallest testable group size")->check(CLI::PositiveNumber);
  s_assoc->add_option("--out", assoc.out, "JSON report path (default: stdout)");
  s_assoc->add_option("--csv", assoc.csv, "Long-format CSV path");
  add_common(s_assoc);

  SynthArgs syn;
  auto* s_synth = app.add_subcommand("synth", "Write a seeded synthetic teacher bundle");
  s_synth->add_option("--seed", syn.seed, "RNG seed")->required();
  s_synth->add_option("--out", syn.out, "Bundle path (.tmef)")->required();
  s_synth->add_option("--truth", syn.truth, "Reference aggregation result (.tmef)");
  s_synth->add_option("--student", syn.student, "Student logits agreeing with the reference, plus nuclei (.tmef)");
  s_synth->add_option("--size", syn.size, "WxH for a large tiled-style scene (no reference)");
  s_synth->add_option("--mpp", syn.mpp, "Microns per pixel stamped on the H&E record")->check(CLI::PositiveNumber);
  add_common(s_synth);

  InfoArgs info;
  auto* s_info = app.add_subcommand("info", "Describe .tmef files, or print version and taxonomy");
  s_info->add_option("files", info.files, ".tmef files");
  add_common(s_info);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string cmd = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == cmd;
    if (!known) {
      std::cerr << "tmeseg: unknown command '" << cmd << "'\n\n" << kSynopsis;
      return 1;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "tmeseg: " << e.what() << "\n\n" << kSynopsis;
    return 1;
  }

  try {
    if (s_agg->parsed()) return run_aggregate(common, agg);
    if (s_post->parsed()) return run_postprocess(common, post);
    if (s_eval->parsed()) return run_evaluate(common, ev);
    if (s_count->parsed()) return run_count(common, cnt);
    if (s_slide->parsed()) return run_tme_slide(common, slide);
    if (s_assoc->parsed()) return run_tme_assoc(common, assoc);
    if (s_synth->parsed()) return run_synth(common, syn);
    if (s_info->parsed()) return run_info(common, info);
  } catch (const tmeseg::Error& e) {
    std::cerr << "tmeseg: " << e.what() << '\n';
    if (e.kind() == tmeseg::ErrorKind::usage) {
      std::cerr << '\n' << kSynopsis;
      return 1;
    }
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tmeseg: " << e.what() << '\n';
    return 2;
  }
  std::cerr << kSynopsis;
  return 1;
}
