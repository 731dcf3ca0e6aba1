#include "aarchive/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "aarchive/archive.hpp"
#include "aarchive/errors.hpp"
#include "aarchive/log.hpp"
#include "aarchive/nifti.hpp"
#include "aarchive/stats.hpp"
#include "aarchive/visualizer.hpp"

namespace aarchive {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string joined(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + joined(path, it.key()) + "'");
}

const json& require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError("'" + path + "' must be an object");
  return j;
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError("'" + path + "' must be a string");
  return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError("'" + path + "' must be a boolean");
  return j.get<bool>();
}

int get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError("'" + path + "' must be an integer");
  return j.get<int>();
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError("'" + path + "' must be a number");
  return j.get<double>();
}

TaskEvaConfig parse_task_config(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j,
             {"selectedObjs", "refObj", "refObjUB", "refObjLB", "coarse",
              "excludeProsthesisSamples", "enforceMuscleRange", "enforceFatRange",
              "dict_hu_range"},
             path);

  TaskEvaConfig cfg;
  if (j.contains("selectedObjs")) {
    const json& arr = j.at("selectedObjs");
    if (!arr.is_array()) throw ConfigError("'" + path + ".selectedObjs' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      cfg.selected_objs.push_back(
          get_string(arr[i], path + ".selectedObjs[" + std::to_string(i) + "]"));
  }
  if (j.contains("refObj")) cfg.ref_obj = get_string(j.at("refObj"), path + ".refObj");
  if (j.contains("refObjUB")) cfg.ref_obj_ub = get_string(j.at("refObjUB"), path + ".refObjUB");
  if (j.contains("refObjLB")) cfg.ref_obj_lb = get_string(j.at("refObjLB"), path + ".refObjLB");
  if (j.contains("coarse")) cfg.coarse = get_bool(j.at("coarse"), path + ".coarse");
  if (j.contains("excludeProsthesisSamples"))
    cfg.exclude_prosthesis_samples =
        get_bool(j.at("excludeProsthesisSamples"), path + ".excludeProsthesisSamples");
  if (j.contains("enforceMuscleRange"))
    cfg.enforce_muscle_range = get_bool(j.at("enforceMuscleRange"), path + ".enforceMuscleRange");
  if (j.contains("enforceFatRange"))
    cfg.enforce_fat_range = get_bool(j.at("enforceFatRange"), path + ".enforceFatRange");
  if (j.contains("dict_hu_range")) {
    const json& ranges = require_object(j.at("dict_hu_range"), path + ".dict_hu_range");
    for (auto it = ranges.begin(); it != ranges.end(); ++it) {
      const std::string rpath = path + ".dict_hu_range." + it.key();
      const json& pair = it.value();
      if (!pair.is_array() || pair.size() != 2)
        throw ConfigError("'" + rpath + "' must be a [low, high] pair");
      cfg.dict_hu_range[it.key()] =
          HuRange{get_number(pair[0], rpath + "[0]"), get_number(pair[1], rpath + "[1]")};
    }
  }

  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
  return cfg;
}

RobustnessConfig parse_robustness(const json& j) {
  require_object(j, "robustness");
  check_keys(j,
             {"target_param", "target_range", "n_components", "do_ttest", "plot_result",
              "save_stats_path"},
             "robustness");

  RobustnessConfig cfg;
  cfg.enabled = true;
  if (j.contains("target_param"))
    cfg.target_param = get_string(j.at("target_param"), "robustness.target_param");
  if (cfg.target_param != "kernel_radius" && cfg.target_param != "bin_width")
    throw ConfigError("'robustness.target_param' must be kernel_radius or bin_width");

  if (!j.contains("target_range"))
    throw ConfigError("'robustness.target_range' is required when robustness is enabled");
  const json& range = j.at("target_range");
  if (!range.is_array() || range.empty())
    throw ConfigError("'robustness.target_range' must be a non-empty array");
  for (std::size_t i = 0; i < range.size(); ++i) {
    const std::string rpath = "robustness.target_range[" + std::to_string(i) + "]";
    const double v = get_number(range[i], rpath);
    if (cfg.target_param == "kernel_radius" && (v < 1.0 || v != std::floor(v)))
      throw ConfigError("'" + rpath + "' must be a positive integer kernel radius");
    if (cfg.target_param == "bin_width" && v <= 0.0)
      throw ConfigError("'" + rpath + "' must be a positive bin width");
    if (std::find(cfg.target_range.begin(), cfg.target_range.end(), v) != cfg.target_range.end())
      throw ConfigError("'" + rpath + "' repeats an earlier value");
    cfg.target_range.push_back(v);
  }
  if (cfg.target_range.size() < 2)
    throw ConfigError("'robustness.target_range' needs at least two values");

  if (j.contains("n_components"))
    cfg.n_components = get_int(j.at("n_components"), "robustness.n_components");
  if (cfg.n_components < 1 || cfg.n_components >= static_cast<int>(cfg.target_range.size()))
    throw ConfigError("'robustness.n_components' must be in [1, " +
                      std::to_string(cfg.target_range.size() - 1) + "]");

  if (j.contains("do_ttest")) cfg.do_ttest = get_bool(j.at("do_ttest"), "robustness.do_ttest");
  if (j.contains("plot_result"))
    cfg.plot_result = get_bool(j.at("plot_result"), "robustness.plot_result");
  if (j.contains("save_stats_path"))
    cfg.save_stats_path = get_string(j.at("save_stats_path"), "robustness.save_stats_path");
  return cfg;
}

void validate_window_name(const std::string& w) {
  static const std::set<std::string> presets{"auto", "soft", "soft_tissue", "lung", "bone"};
  if (presets.count(w)) return;
  bool known = false;
  Registry::builtin().normalize_anatomy_name(w, known);
  if (!known)
    throw ConfigError("'control_images.window' names no preset or known anatomy: '" + w + "'");
}

std::optional<WindowSetting> resolve_window(const std::string& w) {
  if (w.empty() || w == "auto") return std::nullopt;
  if (w == "soft" || w == "soft_tissue") return soft_tissue_window();
  if (w == "lung") return lung_window();
  if (w == "bone") return bone_window();
  return select_window_for_anatomy(w);
}

bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

/// data_id of a volume file name, empty for non-NIfTI files.
std::string strip_nifti_extension(const std::string& filename) {
  if (ends_with(filename, ".nii.gz")) return filename.substr(0, filename.size() - 7);
  if (ends_with(filename, ".nii")) return filename.substr(0, filename.size() - 4);
  return "";
}

json composition_to_json(const BodyComposition& bc) {
  json components = json::array();
  for (const ComponentMetrics& c : bc.components) {
    components.push_back({{"anatomy", c.anatomy},
                          {"voxels", c.voxels},
                          {"volume_cm3", c.volume_cm3},
                          {"area_cm2", c.area_cm2},
                          {"mean_hu", c.mean_hu},
                          {"median_hu", c.median_hu}});
  }
  return json{{"planar", bc.planar},
              {"central_plane", bc.central_plane},
              {"components", std::move(components)}};
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write: " + path);
}

void write_robustness_csv(const std::vector<RobustnessRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write stats CSV: " + path);
  out << "feature,mode,subset,occc,p_median,p_variance\n";
  char buf[64];
  const auto num = [&buf](double v) -> std::string {
    if (std::isnan(v)) return "";
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const RobustnessRow& r : rows)
    out << r.feature << ',' << r.mode << ',' << r.subset << ',' << num(r.occc) << ','
        << num(r.p_median) << ',' << num(r.p_variance) << '\n';
  if (!out) throw IoError("short write on stats CSV: " + path);
}

/// A task config with selectedObjs defaulted to every class-map anatomy
/// present in the label volume, in label order.
TaskEvaConfig with_default_selection(const TaskEvaConfig& cfg,
                                     const Volume<std::int32_t>& labels, const ClassMap& map) {
  if (!cfg.selected_objs.empty()) return cfg;
  TaskEvaConfig out = cfg;
  const std::set<std::int32_t> present(labels.raw().begin(), labels.raw().end());
  for (const auto& [label, name] : map.entries)
    if (label != 0 && present.count(label)) out.selected_objs.push_back(name);
  return out;
}

std::string condition_name(const std::string& param, double value) {
  char buf[64];
  if (param == "kernel_radius")
    std::snprintf(buf, sizeof buf, "kernel_radius=%d", static_cast<int>(value));
  else
    std::snprintf(buf, sizeof buf, "bin_width=%g", value);
  return buf;
}

struct InstanceOutcome {
  ManifestEntry entry;
  DatasetTag tag;
};

std::vector<TagRef> tags_of(const DatasetTag& tag, const std::string& data_id) {
  std::vector<TagRef> out;
  for (const auto& [code, by_severity] : tag.entries)
    for (const auto& [severity, ids] : by_severity)
      if (std::find(ids.begin(), ids.end(), data_id) != ids.end())
        out.push_back(TagRef{code, severity});
  return out;
}

InstanceOutcome process_instance(const WorkflowConfig& cfg, const InstanceFiles& files,
                                 const Registry& registry) {
  const auto t0 = std::chrono::steady_clock::now();
  InstanceOutcome out;
  out.entry.data_id = files.data_id;
  const fs::path out_dir(cfg.output_dir);

  try {
    VolumeGrid vol = reorient_volume(nifti::read_volume(files.image_path), cfg.orientation);

    std::map<std::string, Volume<std::int32_t>> labels;
    std::map<std::string, ClassMap> maps;
    for (const auto& [task, task_cfg] : cfg.target_eva) {
      (void)task_cfg;
      const std::string& mask_path = files.mask_paths.at(task);
      if (mask_path.empty())
        throw IoError("no label map for task '" + task + "' (expected " + files.data_id +
                      cfg.seg_suffix + task + ".nii[.gz])");
      Volume<std::int32_t> lab = reorient_volume(nifti::read_labels(mask_path), cfg.orientation);
      if (lab.dims() != vol.dims())
        throw DomainError("label map of task '" + task + "' does not match the image shape");
      labels.emplace(task, std::move(lab));
      maps.emplace(task, registry.load_class_map(task, cfg.class_map_version));
    }

    const std::string ref_task = cfg.reference_task();
    VolumeBounds bounds;
    bool have_bounds = false;
    int central_plane = -1;
    bool skip = false;
    std::optional<ProsthesisResult> prosthesis;

    if (!ref_task.empty()) {
      const TaskEvaConfig& ref_cfg = cfg.target_eva.at(ref_task);
      if (ref_cfg.has_bounds_pair()) {
        bounds = define_volume_bounds_by_anatomies(labels.at(ref_task), maps.at(ref_task),
                                                   ref_cfg.ref_obj_ub, ref_cfg.ref_obj_lb,
                                                   CropAddon{}, &out.tag, files.data_id);
        have_bounds = true;
        if (!bounds.valid()) skip = true;
      } else if (!ref_cfg.ref_obj.empty()) {
        central_plane = central_plane_of(labels.at(ref_task), maps.at(ref_task), ref_cfg.ref_obj,
                                         registry);
      }
      if (have_bounds && bounds.valid()) {
        prosthesis = detect_hip_prosthesis(vol, bounds.lower.z, &out.tag, files.data_id);
        if (prosthesis->detected && ref_cfg.exclude_prosthesis_samples) skip = true;
      }
    }

    // Body / extremity handling feeds the control image and the bodyCropped
    // ledger code; a warning there never skips the instance.
    MaskVolume trunk, arms, legs;
    bool trunk_cropped = false;
    bool have_body = labels.count("body") > 0;
    if (have_body) {
      trunk = mask_of_label(labels.at("body"), std::int32_t(1));
      if (have_bounds && bounds.valid()) {
        std::vector<MaskVolume> arm_bones;
        if (!ref_task.empty()) {
          for (const char* bone : {"humerus", "ulna", "radius"}) {
            const std::vector<int> ids =
                resolve_common_string(maps.at(ref_task), bone, registry);
            if (ids.empty()) continue;
            MaskVolume m(vol.dims(), vol.affine(), 0);
            for (const int id : ids) {
              const MaskVolume one = mask_of_label(labels.at(ref_task), std::int32_t(id));
              for (std::size_t v = 0; v < m.raw().size(); ++v) m.raw()[v] |= one.raw()[v];
            }
            arm_bones.push_back(std::move(m));
          }
        }
        const ArmLegSeparation sep = separate_arms_and_legs(labels.at("body"), arm_bones, bounds,
                                                            CropAddon{}, &out.tag, files.data_id);
        trunk_cropped = sep.trunk_cropped;
        arms = components_to_mask(sep.components, sep.arm_ids);
        legs = components_to_mask(sep.components, sep.leg_ids);
      }
    }

    if (!skip) {
      json metrics = json::object();
      for (const auto& [task, task_cfg] : cfg.target_eva) {
        const TaskEvaConfig effective =
            with_default_selection(task_cfg, labels.at(task), maps.at(task));
        const BodyComposition bc = body_component_analysis(
            vol, labels.at(task), maps.at(task), effective,
            have_bounds && bounds.valid() ? &bounds : nullptr, central_plane, registry);
        metrics[task] = composition_to_json(bc);
      }
      const std::string metrics_path = (out_dir / (files.data_id + "_metrics.json")).string();
      write_json_file(metrics, metrics_path);
      out.entry.artifacts.push_back(metrics_path);

      if (!cfg.extraction_params_path.empty()) {
        const ExtractionParams params = load_extraction_params(cfg.extraction_params_path);
        const std::string voi_task = ref_task.empty() ? cfg.target_eva.begin()->first : ref_task;
        if (cfg.robustness.enabled) {
          FeatureMapStack stack;
          for (const double value : cfg.robustness.target_range) {
            ExtractionParams varied = params;
            if (cfg.robustness.target_param == "kernel_radius")
              varied.kernel_radius = static_cast<int>(value);
            else
              varied.bin_width = value;
            FeatureMapStack one =
                extract_voxel_features(vol, labels.at(voi_task), varied, {params.label});
            one.conditions.front().condition =
                condition_name(cfg.robustness.target_param, value);
            stack.conditions.push_back(std::move(one.conditions.front()));
          }

          std::vector<RobustnessRow> rows;
          std::vector<RobustnessReport> reports;
          for (const RobustnessMode mode :
               {RobustnessMode::Baseline, RobustnessMode::Standardized, RobustnessMode::Sap}) {
            RobustnessReport rep = eval_feature_robustness(stack, mode, cfg.robustness.n_components,
                                                           cfg.robustness.do_ttest);
            rows.insert(rows.end(), rep.rows.begin(), rep.rows.end());
            reports.push_back(std::move(rep));
          }

          fs::path stats_dir = cfg.robustness.save_stats_path.empty()
                                   ? out_dir
                                   : fs::path(cfg.robustness.save_stats_path);
          std::error_code ec;
          fs::create_directories(stats_dir, ec);
          const std::string stats_path = (stats_dir / (files.data_id + "_stats.csv")).string();
          write_robustness_csv(rows, stats_path);
          out.entry.artifacts.push_back(stats_path);

          if (cfg.robustness.plot_result) {
            const std::string plot_path = (out_dir / (files.data_id + "_occc.png")).string();
            render_occc_boxplot(reports, plot_path);
            out.entry.artifacts.push_back(plot_path);
          }
        } else {
          const FeatureMapStack stack =
              extract_voxel_features(vol, labels.at(voi_task), params, {params.label});
          const std::string csv_path = (out_dir / (files.data_id + "_features.csv")).string();
          export_features_csv(stack, csv_path);
          out.entry.artifacts.push_back(csv_path);
        }
      }

      const std::string archive_task = [&] {
        if (!ref_task.empty()) return ref_task;
        for (const auto& [task, task_cfg] : cfg.target_eva) {
          (void)task_cfg;
          if (task != "body") return task;
        }
        return cfg.target_eva.begin()->first;
      }();
      const ArchiveRecord record = make_archive_record(
          labels.at(archive_task), maps.at(archive_task), registry.graph(), &vol,
          cfg.store_image_in_archive, files.data_id, cfg.class_map_version);
      const std::string archive_path = (out_dir / (files.data_id + ".aarc")).string();
      pack_archive(record, archive_path);
      out.entry.artifacts.push_back(archive_path);
    }

    if (cfg.control_images) {
      CropReport crop_report;
      if (have_body && count_nonzero(trunk) > 0) {
        crop_report = detect_mask_cropping(trunk);
      } else {
        MaskVolume any(vol.dims(), vol.affine(), 0);
        const std::string& task = cfg.target_eva.begin()->first;
        const auto& raw = labels.at(task).raw();
        for (std::size_t v = 0; v < raw.size(); ++v) any.raw()[v] = raw[v] != 0;
        if (count_nonzero(any) > 0) crop_report = detect_mask_cropping(any);
      }

      ControlImageSpec spec;
      spec.plane = choose_control_plane(crop_report);
      spec.window = resolve_window(cfg.control_window);
      if (central_plane >= 0) spec.central_plane_z = central_plane;
      spec.output_path = (out_dir / (files.data_id + "_control.png")).string();

      ControlDetections det;
      if (have_bounds) det.bounds = bounds;
      det.prosthesis = prosthesis;
      if (have_body) {
        det.body = trunk;
        det.body_cropped = trunk_cropped;
        if (count_nonzero(arms) > 0) det.arms = arms;
        if (count_nonzero(legs) > 0) det.legs = legs;
      }
      render_control_image(vol, spec, det);
      out.entry.artifacts.push_back(spec.output_path);
    }

    out.entry.status = skip ? RunStatus::Skipped : RunStatus::Completed;
  } catch (const std::exception& e) {
    out.entry.status = RunStatus::Failed;
    out.entry.message = e.what();
    out.entry.artifacts.clear();
    log::error("instance ", files.data_id, " failed: ", e.what());
  }

  std::sort(out.entry.artifacts.begin(), out.entry.artifacts.end());
  out.entry.tags = tags_of(out.tag, files.data_id);
  out.entry.elapsed_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
  return out;
}

}  // namespace

std::string WorkflowConfig::reference_task() const {
  for (const auto& [task, task_cfg] : target_eva)
    if (task_cfg.has_bounds_pair() || !task_cfg.ref_obj.empty()) return task;
  return "";
}

WorkflowConfig parse_workflow_config(const json& j) {
  require_object(j, "workflowConfig");
  check_keys(j,
             {"io", "orientation", "class_map_version", "target_eva_config", "extraction_params",
              "robustness", "control_images", "workers", "store_image_in_archive"},
             "");

  WorkflowConfig cfg;

  if (!j.contains("io")) throw ConfigError("'io' is required");
  const json& io = require_object(j.at("io"), "io");
  check_keys(io, {"input_dir", "output_dir", "seg_suffix"}, "io");
  if (!io.contains("input_dir")) throw ConfigError("'io.input_dir' is required");
  if (!io.contains("output_dir")) throw ConfigError("'io.output_dir' is required");
  cfg.input_dir = get_string(io.at("input_dir"), "io.input_dir");
  cfg.output_dir = get_string(io.at("output_dir"), "io.output_dir");
  if (cfg.input_dir.empty()) throw ConfigError("'io.input_dir' must not be empty");
  if (cfg.output_dir.empty()) throw ConfigError("'io.output_dir' must not be empty");
  if (io.contains("seg_suffix")) {
    cfg.seg_suffix = get_string(io.at("seg_suffix"), "io.seg_suffix");
    if (cfg.seg_suffix.empty()) throw ConfigError("'io.seg_suffix' must not be empty");
  }

  if (j.contains("orientation")) {
    const std::string codes = get_string(j.at("orientation"), "orientation");
    try {
      cfg.orientation = AxCodes::parse(codes);
      cfg.orientation.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("'orientation': ") + e.what());
    }
  }

  if (j.contains("class_map_version")) {
    cfg.class_map_version = get_int(j.at("class_map_version"), "class_map_version");
    if (cfg.class_map_version != 1 && cfg.class_map_version != 2)
      throw ConfigError("'class_map_version' must be 1 or 2");
  }

  if (!j.contains("target_eva_config")) throw ConfigError("'target_eva_config' is required");
  const json& eva = require_object(j.at("target_eva_config"), "target_eva_config");
  if (eva.empty()) throw ConfigError("'target_eva_config' must define at least one task");
  const Registry& registry = Registry::builtin();
  for (auto it = eva.begin(); it != eva.end(); ++it) {
    const std::string path = "target_eva_config." + it.key();
    try {
      registry.load_class_map(it.key(), cfg.class_map_version);
    } catch (const Error&) {
      throw ConfigError("'" + path + "': unknown task for class-map version " +
                        std::to_string(cfg.class_map_version));
    }
    cfg.target_eva[it.key()] = parse_task_config(it.value(), path);
  }
  int ref_tasks = 0;
  for (const auto& [task, task_cfg] : cfg.target_eva) {
    (void)task;
    if (task_cfg.has_bounds_pair() || !task_cfg.ref_obj.empty()) ++ref_tasks;
  }
  if (ref_tasks > 1)
    throw ConfigError("'target_eva_config' defines more than one reference object task");

  if (j.contains("extraction_params"))
    cfg.extraction_params_path = get_string(j.at("extraction_params"), "extraction_params");

  if (j.contains("robustness")) {
    cfg.robustness = parse_robustness(j.at("robustness"));
    if (cfg.extraction_params_path.empty())
      throw ConfigError("'robustness' requires 'extraction_params'");
  }

  if (j.contains("control_images")) {
    const json& ci = require_object(j.at("control_images"), "control_images");
    check_keys(ci, {"enabled", "window"}, "control_images");
    if (ci.contains("enabled"))
      cfg.control_images = get_bool(ci.at("enabled"), "control_images.enabled");
    if (ci.contains("window")) {
      cfg.control_window = get_string(ci.at("window"), "control_images.window");
      validate_window_name(cfg.control_window);
    }
  }

  if (j.contains("workers")) {
    cfg.workers = get_int(j.at("workers"), "workers");
    if (cfg.workers < 0) throw ConfigError("'workers' must be non-negative");
  }

  if (j.contains("store_image_in_archive"))
    cfg.store_image_in_archive = get_bool(j.at("store_image_in_archive"), "store_image_in_archive");

  return cfg;
}

WorkflowConfig load_workflow_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open workflow config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("workflow config is not valid JSON: " + std::string(e.what()));
  }
  return parse_workflow_config(j);
}

const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::Skipped: return "skipped";
    case RunStatus::Failed: return "failed";
  }
  return "failed";
}

RunStatus run_status_from_string(const std::string& s) {
  if (s == "completed") return RunStatus::Completed;
  if (s == "skipped") return RunStatus::Skipped;
  if (s == "failed") return RunStatus::Failed;
  throw FormatError("unknown run status: '" + s + "'");
}

bool RunManifest::all_completed() const {
  for (const auto& [id, e] : entries) {
    (void)id;
    if (e.status != RunStatus::Completed) return false;
  }
  return true;
}

bool RunManifest::any_skipped() const {
  for (const auto& [id, e] : entries) {
    (void)id;
    if (e.status == RunStatus::Skipped) return true;
  }
  return false;
}

bool RunManifest::any_failed() const {
  for (const auto& [id, e] : entries) {
    (void)id;
    if (e.status == RunStatus::Failed) return true;
  }
  return false;
}

json RunManifest::to_json(bool include_timings) const {
  json j = json::object();
  if (!entries.empty()) {
    json instances = json::object();
    for (const auto& [id, e] : entries) {
      json tags_json = json::array();
      for (const TagRef& t : e.tags)
        tags_json.push_back({{"code", t.code}, {"severity", t.severity}});
      json entry = {{"status", to_string(e.status)},
                    {"tags", std::move(tags_json)},
                    {"artifacts", e.artifacts}};
      if (include_timings) entry["elapsed_ms"] = e.elapsed_ms;
      if (!e.message.empty()) entry["message"] = e.message;
      instances[id] = std::move(entry);
    }
    j["instances"] = std::move(instances);
  }
  if (!tags.entries.empty()) j["dataset_tags"] = tags.to_json();
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  if (!j.is_object()) throw FormatError("manifest document must be an object");
  RunManifest m;
  if (j.contains("instances")) {
    for (auto it = j.at("instances").begin(); it != j.at("instances").end(); ++it) {
      const json& e = it.value();
      ManifestEntry entry;
      entry.data_id = it.key();
      entry.status = run_status_from_string(e.at("status").get<std::string>());
      for (const json& t : e.value("tags", json::array()))
        entry.tags.push_back(TagRef{t.at("code").get<std::string>(),
                                    t.at("severity").get<std::string>()});
      for (const json& a : e.value("artifacts", json::array()))
        entry.artifacts.push_back(a.get<std::string>());
      entry.elapsed_ms = e.value("elapsed_ms", 0.0);
      entry.message = e.value("message", "");
      m.entries[it.key()] = std::move(entry);
    }
  }
  if (j.contains("dataset_tags")) {
    const json& tags = j.at("dataset_tags");
    for (auto code = tags.begin(); code != tags.end(); ++code)
      for (auto severity = code.value().begin(); severity != code.value().end(); ++severity)
        for (const json& id : severity.value())
          add_tag_to_data(m.tags, code.key(), id.get<std::string>(), severity.key());
  }
  return m;
}

std::vector<InstanceFiles> discover_instances(const WorkflowConfig& cfg) {
  const fs::path dir(cfg.input_dir);
  if (!fs::is_directory(dir)) throw IoError("input directory does not exist: " + cfg.input_dir);

  std::map<std::string, std::string> images;  // data_id -> path
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    const std::string id = strip_nifti_extension(name);
    if (id.empty() || id.find(cfg.seg_suffix) != std::string::npos) continue;
    auto it = images.find(id);
    // Prefer .nii.gz when both compressions exist.
    if (it == images.end() || ends_with(name, ".nii.gz")) images[id] = entry.path().string();
  }
  if (images.empty())
    throw IoError("no image volumes (*.nii, *.nii.gz) found in: " + cfg.input_dir);

  std::vector<InstanceFiles> out;
  for (const auto& [id, image_path] : images) {
    InstanceFiles files;
    files.data_id = id;
    files.image_path = image_path;
    for (const auto& [task, task_cfg] : cfg.target_eva) {
      (void)task_cfg;
      std::string found;
      for (const char* ext : {".nii.gz", ".nii"}) {
        const fs::path candidate = dir / (id + cfg.seg_suffix + task + ext);
        if (fs::is_regular_file(candidate)) {
          found = candidate.string();
          break;
        }
      }
      files.mask_paths[task] = found;
    }
    out.push_back(std::move(files));
  }
  return out;
}

RunManifest run_pipeline(const WorkflowConfig& cfg) {
  const std::vector<InstanceFiles> instances = discover_instances(cfg);

  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + cfg.output_dir);
  {
    const fs::path probe = fs::path(cfg.output_dir) / ".write_probe";
    std::ofstream test(probe, std::ios::binary);
    if (!test) throw IoError("output directory is not writable: " + cfg.output_dir);
    test.close();
    fs::remove(probe, ec);
  }

  const Registry& registry = Registry::builtin();
  const std::size_t n = instances.size();
  std::vector<InstanceOutcome> slots(n);
  std::atomic<std::size_t> next{0};

  unsigned workers = cfg.workers > 0 ? static_cast<unsigned>(cfg.workers)
                                     : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
  log::info("processing ", n, " instance(s) on ", workers, " worker(s)");

  const auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      slots[i] = process_instance(cfg, instances[i], registry);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  // Single-writer collection in discovery order keeps the ledger and the
  // manifest deterministic regardless of scheduling.
  RunManifest manifest;
  for (InstanceOutcome& outcome : slots) {
    for (const auto& [code, by_severity] : outcome.tag.entries)
      for (const auto& [severity, ids] : by_severity)
        for (const std::string& id : ids) add_tag_to_data(manifest.tags, code, id, severity);
    log::info("instance ", outcome.entry.data_id, ": ", to_string(outcome.entry.status));
    manifest.entries[outcome.entry.data_id] = std::move(outcome.entry);
  }

  export_manifest(manifest, (fs::path(cfg.output_dir) / "run_manifest.json").string());
  export_dataset_tags(manifest.tags, (fs::path(cfg.output_dir) / "dataset_tags.json").string());
  return manifest;
}

void export_manifest(const RunManifest& m, const std::string& path, bool include_timings) {
  write_json_file(m.to_json(include_timings), path);
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  return RunManifest::from_json(j);
}

void export_dataset_tags(const DatasetTag& tag, const std::string& path) {
  write_json_file(tag.to_json(), path);
}

}  // namespace aarchive
