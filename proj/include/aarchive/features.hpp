#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aarchive/registry.hpp"
#include "aarchive/standardizer.hpp"
#include "aarchive/volume.hpp"

namespace aarchive {

/// Inclusive HU interval.
struct HuRange {
  double low = 0.0;
  double high = 0.0;

  bool contains(double hu) const { return hu >= low && hu <= high; }
};

/// Tissue name -> HU range. Keys used by the muscle splitter: "muscle"
/// (normal attenuation), "fatty_muscle" (low attenuation), "fat".
using HuRangeDict = std::map<std::string, HuRange>;

/// Default ranges: muscle [30, 150], fatty_muscle [-29, 29], fat [-190, 30].
/// The fat upper bound overlaps the muscle lower bound as published; the
/// splitter's precedence order (muscle, fatty_muscle, fat) disambiguates.
HuRangeDict default_hu_ranges();

/// Per-task evaluation settings (one value of the task -> settings map).
/// ref_obj selects 2D analysis on the central plane of that anatomy;
/// ref_obj_ub/ref_obj_lb select 3D analysis between computed volume bounds.
/// The two modes are mutually exclusive; with neither, metrics cover the
/// whole volume.
struct TaskEvaConfig {
  std::vector<std::string> selected_objs;
  std::string ref_obj;
  std::string ref_obj_ub;
  std::string ref_obj_lb;
  bool coarse = false;
  bool exclude_prosthesis_samples = false;
  bool enforce_muscle_range = false;
  bool enforce_fat_range = false;
  HuRangeDict dict_hu_range = default_hu_ranges();

  bool has_bounds_pair() const { return !ref_obj_ub.empty() && !ref_obj_lb.empty(); }

  /// ConfigError when ref_obj is combined with either bound key, or when
  /// only one of ref_obj_ub/ref_obj_lb is given, or a HU range is inverted.
  void validate() const;
};

/// Task name -> settings, mirroring the nested target_eva_config dictionary.
using TargetEvaConfig = std::map<std::string, TaskEvaConfig>;

/// Metrics of one anatomy (or one muscle-split category). Volume is filled
/// in 3D mode, area in 2D mode; the other stays NaN. An anatomy without
/// voxels in the analyzed window keeps NaN HU statistics and zero size.
struct ComponentMetrics {
  std::string anatomy;
  long voxels = 0;
  double volume_cm3 = 0.0;
  double area_cm2 = 0.0;
  double mean_hu = 0.0;
  double median_hu = 0.0;
};

struct BodyComposition {
  std::vector<ComponentMetrics> components;
  bool planar = false;      ///< true when computed on a single plane
  int central_plane = -1;   ///< z of that plane, -1 in 3D mode

  const ComponentMetrics* find(const std::string& anatomy) const;
};

/// Central transverse plane of an anatomy: floor((z_min + z_max) / 2) of its
/// mask extent. The name may be a common string (bilateral union). Throws
/// DomainError when nothing resolves or the resolved labels have no voxels.
int central_plane_of(const Volume<std::int32_t>& labels, const ClassMap& map,
                     const std::string& anatomy,
                     const Registry& registry = Registry::builtin());

/// Body-component metrics for every selected anatomy of one task.
///
/// 3D mode (default): voxels with z in [bounds.lower.z, bounds.upper.z] when
/// valid bounds are given, the whole volume otherwise; reports volume in cm3
/// plus mean/median HU. 2D mode (central_plane >= 0): voxels of that plane
/// only; reports area in cm2 plus mean HU. Anatomy names go through
/// resolve_common_string, so bilateral pairs aggregate into one row.
///
/// enforce_fat_range restricts anatomies whose normalized name contains
/// "fat" to the configured fat HU range. enforce_muscle_range appends three
/// rows per muscle anatomy, suffixed _normal_attenuation, _low_attenuation
/// and _imat, holding the HU-split partition of that muscle.
///
/// Throws DomainError on shape mismatch, an explicitly invalid bounds
/// argument, or an out-of-range plane index.
BodyComposition body_component_analysis(const VolumeGrid& vol, const Volume<std::int32_t>& labels,
                                        const ClassMap& map, const TaskEvaConfig& config,
                                        const VolumeBounds* bounds = nullptr,
                                        int central_plane = -1,
                                        const Registry& registry = Registry::builtin());

/// HU partition of a muscle mask. Precedence when ranges overlap: normal
/// attenuation first, then low attenuation, then fat (IMAT); voxels outside
/// all three ranges stay unassigned.
struct MuscleSplit {
  MaskVolume normal;
  MaskVolume low_attenuation;
  MaskVolume imat;
};

MuscleSplit split_muscle_by_hu(const MaskVolume& muscle, const VolumeGrid& vol,
                               const HuRangeDict& ranges = default_hu_ranges());

/// mask AND (HU in ranges.at("fat")).
MaskVolume enforce_fat_range(const MaskVolume& mask, const VolumeGrid& vol,
                             const HuRangeDict& ranges = default_hu_ranges());

/// Doane-optimal histogram bin width snapped to preferred values: the raw
/// width (max-min)/(1 + log2(n) + log2(1 + |g1|/sigma_g1)) is rounded to the
/// nearest integer, then to the nearest rounding target (2.3 -> 2,
/// 16.8 -> 20). Throws DomainError for n < 3 or zero range.
double optimal_hist_bin_width(const std::vector<double>& values,
                              const std::vector<int>& rounding_targets = {2, 5, 10, 20, 40, 50});

/// Voxel-based extraction settings. init_value of NaN is replaced by zero
/// (NaN fills propagate into downstream numerics otherwise).
struct ExtractionParams {
  double bin_width = 25.0;
  int label = 1;
  int kernel_radius = 2;
  bool masked_kernel = true;
  double init_value = 0.0;
  long voxel_batch = 10000;

  /// ConfigError unless bin_width > 0, kernel_radius >= 1, voxel_batch >= 1.
  void validate() const;
};

/// Read params from a YAML file with the exampleVoxel.yaml layout
/// (imageType / featureClass / setting / voxelSetting). Only Original image
/// type and the firstorder feature class are supported; force2D must stay
/// false. Unknown keys raise ConfigError naming the key path.
ExtractionParams load_extraction_params(const std::string& yaml_path);

/// Names of the computed first-order features, in export column order.
/// Total energy is omitted: it equals energy up to a constant voxel-volume
/// factor.
const std::array<std::string, 17>& first_order_feature_names();

/// Feature vectors of one VOI under one extraction condition. coords lists
/// the VOI voxels in x-fastest scan order; every feature vector runs
/// parallel to it.
struct VoxelFeatureMap {
  std::string condition;
  int label = 0;
  double bin_width = 0.0;
  int kernel_radius = 0;
  Eigen::Vector3i shape{0, 0, 0};
  std::vector<Eigen::Vector3i> coords;
  std::map<std::string, std::vector<double>> features;

  std::size_t size() const { return coords.size(); }
};

/// Conditions stacked over the same volume (labels x parameter settings).
struct FeatureMapStack {
  std::vector<VoxelFeatureMap> conditions;

  const VoxelFeatureMap* find(const std::string& condition) const;
  std::vector<std::string> condition_names() const;
};

/// Per-voxel first-order features over Chebyshev-ball neighborhoods of
/// radius params.kernel_radius (intersected with the VOI when
/// params.masked_kernel). One stack entry per selected label;
/// preset_bin_widths overrides params.bin_width per label when non-empty
/// (lengths must match). Histogram features (entropy, uniformity) use fixed
/// bins of the label's width anchored at the neighborhood minimum; all other
/// features use raw intensities. Voxels are processed in parallel batches of
/// params.voxel_batch; results are independent of the partition.
///
/// Throws DomainError for an empty VOI or a label absent from the volume,
/// ConfigError for invalid params or mismatched list lengths.
FeatureMapStack extract_voxel_features(const VolumeGrid& vol, const Volume<std::int32_t>& labels,
                                       const ExtractionParams& params,
                                       const std::vector<int>& selected_labels,
                                       const std::vector<double>& preset_bin_widths = {});

/// Scatter one condition's feature vector into a dense full-shape volume;
/// voxels outside the VOI get `fill`.
Volume<double> to_dense(const VoxelFeatureMap& fmap, const std::string& feature,
                        double fill = 0.0);

/// Reindex a bbox-cropped feature map into the full volume: the cropped map
/// carries a kernel_radius-wide padding ring per face, its interior lands at
/// bbox_origin with bbox_extent, everything else gets `fill`. Throws
/// DomainError when shapes disagree or the bbox leaves the volume.
Volume<double> reconstruct_global_feature_map(const Volume<double>& fmap_cropped,
                                              const Eigen::Vector3i& bbox_origin,
                                              const Eigen::Vector3i& bbox_extent,
                                              int kernel_radius,
                                              const Eigen::Vector3i& full_shape,
                                              double fill = 0.0);

/// Population z-score of a vector. DomainError on zero standard deviation.
std::vector<double> zscore(const std::vector<double>& x);

/// Subset Average Pooling output for one feature.
struct SapResult {
  std::vector<std::string> subset;
  std::vector<double> pooled;  ///< length = VOI voxel count
};

/// Pool one feature across a subset of conditions:
///   X'_i = X_i / ln N,   Z_i = zscore(X'_i),
///   pooled = (1/k) * sum_i (Z_i - mean_S) / std_S,
/// where mean_S/std_S are scalar statistics of the concatenated Z_i over the
/// subset (population convention). Per-condition standardization makes the
/// result invariant to positive affine maps of any single condition.
///
/// Throws DomainError when a condition is missing, VOIs differ, N < 2, or a
/// condition's feature vector is constant.
SapResult sap_pool(const FeatureMapStack& stack, const std::string& feature,
                   const std::vector<std::string>& subset);

/// CSV export, one row per voxel and condition:
/// x,y,z,<features in first_order_feature_names() order>,condition.
void export_features_csv(const FeatureMapStack& stack, const std::string& path);

}  // namespace aarchive
