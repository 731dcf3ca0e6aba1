#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aarchive/image2d.hpp"
#include "aarchive/registry.hpp"
#include "aarchive/volume.hpp"

namespace aarchive {

/// Boundary sides of a PLS+ volume. Axis 0 runs anterior to posterior,
/// axis 1 right to left, axis 2 inferior to superior.
enum class Side { Anterior, Posterior, Right, Left, Inferior, Superior };

const char* to_string(Side s);

/// Outcome of MIP-based crop detection: the boundary sides the mask touches
/// on each projection plane.
struct CropReport {
  std::vector<Side> transverse;
  std::vector<Side> coronal;
  std::vector<Side> sagittal;
  bool cropped = false;

  std::set<Side> touched() const;
};

/// Per-axis inset margins (voxels) widening the boundary band that counts
/// as touching.
struct CropAddon {
  int x = 0;
  int y = 0;
  int z = 0;
};

/// One bound-defining anatomy and its resolved z-plane. Codes: z >= 0 valid,
/// -1 cropped, -2 missing.
struct BoundEntry {
  std::string anatomy;
  int z = -2;

  bool valid() const { return z >= 0; }
  bool cropped() const { return z == -1; }
  bool missing() const { return z == -2; }
};

struct VolumeBounds {
  BoundEntry upper;
  BoundEntry lower;

  bool valid() const { return upper.valid() && lower.valid(); }
};

/// Exclusion ledger: code -> severity -> data ids, one entry per
/// (code, data_id).
struct DatasetTag {
  std::map<std::string, std::map<std::string, std::vector<std::string>>> entries;

  nlohmann::json to_json() const;
  std::string pretty() const;
  bool has(const std::string& code, const std::string& data_id) const;
};

void add_tag_to_data(DatasetTag& tag, const std::string& code, const std::string& data_id,
                     const std::string& severity);

/// Labels in a class map matching an anatomy selector given as a common
/// string: exact name, or name_left / name_right. More than two matches is
/// an error; zero matches returns empty.
std::vector<int> resolve_common_string(const ClassMap& map, const std::string& anatomy,
                                       const Registry& registry = Registry::builtin());

/// MIP-based crop detection of a binary mask (PLS+).
CropReport detect_mask_cropping(const MaskVolume& mask, const CropAddon& addon = {});

/// Upper/lower bound planes from the named anatomies. Appends ledger codes
/// (upperBoundCropped, lowerBoundMissing, ...) when `tag` is supplied.
VolumeBounds define_volume_bounds_by_anatomies(const Volume<std::int32_t>& labels,
                                               const ClassMap& map,
                                               const std::string& upper_anatomy,
                                               const std::string& lower_anatomy,
                                               const CropAddon& addon = {},
                                               DatasetTag* tag = nullptr,
                                               const std::string& data_id = "",
                                               const Registry& registry = Registry::builtin());

/// Bright-object segmentation: Farid gradient -> threshold -> distance
/// transform -> watershed -> 3x3 opening and closing. Labels 1..n.
Label2D segment_bright_objects(const Image2D& img, float bright_threshold = 1500.0f);

/// Coronal MIP of the sub-volume at or above `z0`, transposed and flipped so
/// the bottom row is the z0 plane and columns run right to left.
Image2D coronal_mip_above(const VolumeGrid& vol, int z0);

struct ProsthesisResult {
  bool detected = false;
  Label2D labeled;                       ///< bright-object labels on the MIP
  std::vector<int> prosthesis_labels;    ///< bottom-touching and large enough
  std::vector<int> other_implant_labels; ///< bright but not prosthesis
  Image2D mip;                           ///< the image that was segmented
};

/// Hip prosthesis detection on the coronal MIP above the lower bound. Area
/// limit is in mm^2 of projected coronal pixels.
ProsthesisResult detect_hip_prosthesis(const VolumeGrid& vol, int lower_bound,
                                       DatasetTag* tag = nullptr,
                                       const std::string& data_id = "",
                                       float bright_threshold = 1500.0f,
                                       double min_area_mm2 = 300.0);

/// 26-connected components of a binary predicate over a label volume.
Volume<std::int32_t> connected_components_3d(const MaskVolume& mask, int* count = nullptr);

struct ArmLegSeparation {
  Volume<std::int32_t> components;  ///< labeled extremity components
  std::vector<int> arm_ids;
  std::vector<int> leg_ids;
  bool trunk_cropped = false;
};

/// Split body_extremities (label 2) components into arms (overlapping any
/// arm-bone mask) and legs, and check the in-bounds trunk (label 1) for
/// lateral / anterior / posterior cropping.
ArmLegSeparation separate_arms_and_legs(const Volume<std::int32_t>& body_labels,
                                        const std::vector<MaskVolume>& arm_bone_masks,
                                        const VolumeBounds& bounds, const CropAddon& addon = {},
                                        DatasetTag* tag = nullptr,
                                        const std::string& data_id = "");

/// Union mask of selected component ids.
MaskVolume components_to_mask(const Volume<std::int32_t>& components, const std::vector<int>& ids);

}  // namespace aarchive
