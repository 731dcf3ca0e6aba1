#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aarchive/errors.hpp"
#include "aarchive/features.hpp"
#include "aarchive/nifti.hpp"
#include "aarchive/orientation.hpp"
#include "aarchive/pipeline.hpp"
#include "aarchive/stats.hpp"
#include "aarchive/visualizer.hpp"

namespace {

using namespace aarchive;

Plane parse_plane(const std::string& s) {
  if (s == "coronal") return Plane::Coronal;
  if (s == "sagittal") return Plane::Sagittal;
  if (s == "transverse") return Plane::Transverse;
  throw ConfigError("unknown plane: '" + s + "' (coronal, sagittal, transverse)");
}

std::optional<WindowSetting> parse_window(const std::string& w) {
  if (w.empty() || w == "auto") return std::nullopt;
  if (w == "soft" || w == "soft_tissue") return soft_tissue_window();
  if (w == "lung") return lung_window();
  if (w == "bone") return bone_window();
  return select_window_for_anatomy(w);
}

std::vector<double> read_sample(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sample file: " + path);
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  if (values.empty()) throw FormatError("no numeric values in: " + path);
  return values;
}

int cmd_run(const std::string& config_path, int workers, bool dry_run) {
  WorkflowConfig cfg = load_workflow_config(config_path);
  if (workers >= 0) cfg.workers = workers;

  if (dry_run) {
    const auto instances = discover_instances(cfg);
    std::printf("%zu instance(s) in %s:\n", instances.size(), cfg.input_dir.c_str());
    for (const InstanceFiles& f : instances) {
      std::printf("  %s\n", f.data_id.c_str());
      for (const auto& [task, path] : f.mask_paths)
        std::printf("    %-14s %s\n", task.c_str(), path.empty() ? "MISSING" : path.c_str());
    }
    return 0;
  }

  const RunManifest manifest = run_pipeline(cfg);
  for (const auto& [id, entry] : manifest.entries) {
    std::printf("%-24s %s", id.c_str(), to_string(entry.status));
    if (!entry.message.empty()) std::printf("  (%s)", entry.message.c_str());
    std::printf("\n");
  }
  if (manifest.any_failed()) return 1;
  if (manifest.any_skipped()) return 2;
  return 0;
}

int cmd_bounds(const std::string& labels_path, const std::string& task, int version,
               const std::string& upper, const std::string& lower,
               const std::string& orientation) {
  const Registry& registry = Registry::builtin();
  const ClassMap map = registry.load_class_map(task, version);
  const auto labels =
      reorient_volume(nifti::read_labels(labels_path), AxCodes::parse(orientation));
  const VolumeBounds bounds =
      define_volume_bounds_by_anatomies(labels, map, upper, lower, CropAddon{}, nullptr, "",
                                        registry);
  nlohmann::json j{{"upper", {{"anatomy", bounds.upper.anatomy}, {"z", bounds.upper.z}}},
                   {"lower", {{"anatomy", bounds.lower.anatomy}, {"z", bounds.lower.z}}},
                   {"valid", bounds.valid()}};
  std::cout << j.dump(2) << '\n';
  return bounds.valid() ? 0 : 2;
}

int cmd_features(const std::string& image_path, const std::string& labels_path,
                 const std::string& params_path, const std::string& out_path,
                 const std::string& orientation) {
  const AxCodes target = AxCodes::parse(orientation);
  const VolumeGrid vol = reorient_volume(nifti::read_volume(image_path), target);
  const auto labels = reorient_volume(nifti::read_labels(labels_path), target);
  const ExtractionParams params = load_extraction_params(params_path);
  const FeatureMapStack stack = extract_voxel_features(vol, labels, params, {params.label});
  export_features_csv(stack, out_path);
  std::printf("wrote %s (%zu voxels)\n", out_path.c_str(), stack.conditions.front().size());
  return 0;
}

int cmd_stats(const std::string& a_path, const std::string& b_path, bool paired,
              const std::string& alternative) {
  Alternative alt = Alternative::TwoSided;
  if (alternative == "greater") alt = Alternative::Greater;
  else if (alternative == "less") alt = Alternative::Less;
  else if (alternative != "two-sided")
    throw ConfigError("unknown alternative: '" + alternative + "'");

  const TestReport report =
      ttest_with_auto_checks(read_sample(a_path), read_sample(b_path), paired, alt);
  nlohmann::json j{{"chosen_mean_test", report.chosen_mean_test},
                   {"p", report.p()},
                   {"p_values", report.p_values},
                   {"normality_p", report.normality_p},
                   {"notes", report.notes}};
  if (report.chosen_variance_test) j["chosen_variance_test"] = *report.chosen_variance_test;
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_render(const std::string& image_path, const std::string& out_path,
               const std::string& plane, const std::string& window,
               const std::string& orientation) {
  const VolumeGrid vol =
      reorient_volume(nifti::read_volume(image_path), AxCodes::parse(orientation));
  ControlImageSpec spec;
  spec.plane = parse_plane(plane);
  spec.window = parse_window(window);
  spec.output_path = out_path;
  render_control_image(vol, spec, ControlDetections{});
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CT volume standardization, archiving, and analysis"};
  app.require_subcommand(1);

  std::string config_path;
  int workers = -1;
  bool dry_run = false;
  CLI::App* run = app.add_subcommand("run", "Run the batch pipeline over an input directory");
  run->add_option("--config", config_path, "workflow config (JSON)")->required();
  run->add_option("--workers", workers, "worker threads (default: logical cores)");
  run->add_flag("--dry-run", dry_run, "list discovered instances without processing");

  std::string labels_path, task = "total", upper, lower, orientation = "PLS";
  int version = 2;
  CLI::App* bounds = app.add_subcommand("bounds", "Resolve upper/lower volume bounds");
  bounds->add_option("--labels", labels_path, "label map (NIfTI)")->required();
  bounds->add_option("--upper", upper, "upper bound anatomy")->required();
  bounds->add_option("--lower", lower, "lower bound anatomy")->required();
  bounds->add_option("--task", task, "segmentation task of the label map");
  bounds->add_option("--version", version, "class-map version");
  bounds->add_option("--orientation", orientation, "target axis codes");

  std::string image_path, params_path, out_path = "features.csv";
  CLI::App* features = app.add_subcommand("features", "Extract voxel-based radiomic features");
  features->add_option("--image", image_path, "image volume (NIfTI)")->required();
  features->add_option("--labels", labels_path, "label map (NIfTI)")->required();
  features->add_option("--params", params_path, "extraction params (YAML)")->required();
  features->add_option("--out", out_path, "output CSV path");
  features->add_option("--orientation", orientation, "target axis codes");

  std::string a_path, b_path, alternative = "two-sided";
  bool paired = false;
  CLI::App* stats = app.add_subcommand("stats", "Compare two samples with automatic checks");
  stats->add_option("--a", a_path, "first sample (text file of numbers)")->required();
  stats->add_option("--b", b_path, "second sample")->required();
  stats->add_flag("--paired", paired, "treat the samples as paired");
  stats->add_option("--alternative", alternative, "two-sided, greater, or less");

  std::string plane = "coronal", window = "auto", render_out = "control.png";
  CLI::App* render = app.add_subcommand("render", "Render a MIP control image");
  render->add_option("--image", image_path, "image volume (NIfTI)")->required();
  render->add_option("--out", render_out, "output PNG path");
  render->add_option("--plane", plane, "coronal, sagittal, or transverse");
  render->add_option("--window", window, "auto, soft, lung, bone, or an anatomy name");
  render->add_option("--orientation", orientation, "target axis codes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, workers, dry_run);
    if (bounds->parsed())
      return cmd_bounds(labels_path, task, version, upper, lower, orientation);
    if (features->parsed())
      return cmd_features(image_path, labels_path, params_path, out_path, orientation);
    if (stats->parsed()) return cmd_stats(a_path, b_path, paired, alternative);
    if (render->parsed()) return cmd_render(image_path, render_out, plane, window, orientation);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
