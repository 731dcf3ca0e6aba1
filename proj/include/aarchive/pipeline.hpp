#pragma once

#include <map>
#include <string>
#include <vector>

#include "aarchive/features.hpp"
#include "aarchive/orientation.hpp"
#include "aarchive/standardizer.hpp"
#include "json.hpp"

namespace aarchive {

/// Robustness-evaluation settings of a workflow. When enabled, voxel
/// features are extracted once per value of `target_param` in `target_range`
/// and the resulting condition stack is scored with OCCC under the baseline,
/// standardized, and SAP modes.
struct RobustnessConfig {
  bool enabled = false;
  std::string target_param = "kernel_radius";  ///< or "bin_width"
  std::vector<double> target_range;
  int n_components = 2;
  bool do_ttest = false;
  bool plot_result = false;
  std::string save_stats_path;  ///< directory for per-instance CSVs; output_dir when empty
};

/// The workflow dictionary driving a batch run. Loaded from strict JSON:
/// unknown keys anywhere are rejected with their full key path.
struct WorkflowConfig {
  std::string input_dir;
  std::string output_dir;
  std::string seg_suffix = "_seg_";
  AxCodes orientation = AxCodes::pls();
  int class_map_version = 2;
  TargetEvaConfig target_eva;
  std::string extraction_params_path;  ///< empty disables voxel features
  RobustnessConfig robustness;
  bool control_images = true;
  std::string control_window = "auto";  ///< "auto", a preset, or an anatomy name
  bool store_image_in_archive = false;
  int workers = 0;  ///< 0 = logical cores

  /// Task carrying the reference-object settings, empty when none does.
  std::string reference_task() const;
};

/// Parse and validate a workflow dictionary. Table 2 level-2 keys are
/// checked against the supported set; task names must resolve to a class
/// map at the configured version; refObj is mutually exclusive with the
/// refObjUB / refObjLB pair; target_range must be non-empty (and longer
/// than n_components) when robustness is enabled.
WorkflowConfig parse_workflow_config(const nlohmann::json& j);
WorkflowConfig load_workflow_config(const std::string& path);

enum class RunStatus { Completed, Skipped, Failed };

const char* to_string(RunStatus s);
RunStatus run_status_from_string(const std::string& s);

/// One (code, severity) pair copied from the dataset tag ledger.
struct TagRef {
  std::string code;
  std::string severity;

  bool operator==(const TagRef&) const = default;
};

struct ManifestEntry {
  std::string data_id;
  RunStatus status = RunStatus::Failed;
  std::vector<TagRef> tags;            ///< sorted by (code, severity)
  std::vector<std::string> artifacts;  ///< produced file paths, sorted
  double elapsed_ms = 0.0;
  std::string message;                 ///< failure reason, empty otherwise
};

/// Outcome of a batch run: one entry per discovered data_id plus the merged
/// exclusion ledger.
struct RunManifest {
  std::map<std::string, ManifestEntry> entries;
  DatasetTag tags;

  bool all_completed() const;
  bool any_skipped() const;
  bool any_failed() const;

  /// Deterministic JSON document, keys sorted; an empty manifest serializes
  /// to an empty object.
  nlohmann::json to_json(bool include_timings = true) const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Input files of one instance: the image and one label map per configured
/// task, named <id>.nii[.gz] and <id><seg_suffix><task>.nii[.gz].
struct InstanceFiles {
  std::string data_id;
  std::string image_path;
  std::map<std::string, std::string> mask_paths;  ///< task -> path ("" when absent)
};

/// Scan cfg.input_dir for instances, sorted by data_id. Throws IoError when
/// the directory does not exist or holds no image volumes.
std::vector<InstanceFiles> discover_instances(const WorkflowConfig& cfg);

/// Run the batch pipeline: per instance reorient, resolve volume bounds,
/// detect prosthesis / cropping, analyze body components, optionally extract
/// voxel features and evaluate robustness, pack the archive, and render the
/// control image. Instances run on a worker pool; per-instance failures are
/// isolated into failed entries. Writes run_manifest.json and
/// dataset_tags.json into cfg.output_dir.
RunManifest run_pipeline(const WorkflowConfig& cfg);

void export_manifest(const RunManifest& m, const std::string& path,
                     bool include_timings = true);
RunManifest load_manifest(const std::string& path);

/// Ledger document grouped code -> severity -> data ids.
void export_dataset_tags(const DatasetTag& tag, const std::string& path);

}  // namespace aarchive
