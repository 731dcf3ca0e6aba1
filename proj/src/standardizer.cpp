#include "aarchive/standardizer.hpp"

#include <algorithm>
#include <limits>
#include <utility>

#include "aarchive/errors.hpp"
#include "aarchive/log.hpp"

namespace aarchive {

const char* to_string(Side s) {
  switch (s) {
    case Side::Anterior: return "anterior";
    case Side::Posterior: return "posterior";
    case Side::Right: return "right";
    case Side::Left: return "left";
    case Side::Inferior: return "inferior";
    case Side::Superior: return "superior";
  }
  return "unknown";
}

std::set<Side> CropReport::touched() const {
  std::set<Side> all;
  all.insert(transverse.begin(), transverse.end());
  all.insert(coronal.begin(), coronal.end());
  all.insert(sagittal.begin(), sagittal.end());
  return all;
}

nlohmann::json DatasetTag::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [code, by_severity] : entries) {
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [severity, ids] : by_severity) s[severity] = ids;
    j[code] = std::move(s);
  }
  return j;
}

std::string DatasetTag::pretty() const { return to_json().dump(2); }

bool DatasetTag::has(const std::string& code, const std::string& data_id) const {
  const auto it = entries.find(code);
  if (it == entries.end()) return false;
  for (const auto& [severity, ids] : it->second)
    if (std::find(ids.begin(), ids.end(), data_id) != ids.end()) return true;
  return false;
}

void add_tag_to_data(DatasetTag& tag, const std::string& code, const std::string& data_id,
                     const std::string& severity) {
  if (tag.has(code, data_id)) return;
  tag.entries[code][severity].push_back(data_id);
  log::info("tagged ", data_id, " with ", code, " (", severity, ")");
}

std::vector<int> resolve_common_string(const ClassMap& map, const std::string& anatomy,
                                       const Registry& registry) {
  const std::string base = registry.normalize_anatomy_name(anatomy);
  std::vector<int> labels;
  for (const std::string& name : {base, base + "_left", base + "_right"})
    if (const auto label = map.label_of(name)) labels.push_back(*label);
  if (labels.size() > 2)
    throw DomainError("anatomy '" + anatomy + "' matches more than two entries of class map '" +
                      map.task_name + "'");
  return labels;
}

CropReport detect_mask_cropping(const MaskVolume& mask, const CropAddon& addon) {
  const Eigen::Vector3i d = mask.dims();
  if (d.minCoeff() < 1) throw DomainError("detect_mask_cropping: degenerate mask shape");

  // Extent of the mask. Checking the extent against the boundary bands is
  // the per-plane MIP test with the projection loop fused away.
  int mn[3] = {d.x(), d.y(), d.z()};
  int mx[3] = {-1, -1, -1};
  const auto& raw = mask.raw();
  std::size_t n = 0;
  for (int k = 0; k < d.z(); ++k)
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i, ++n) {
        if (!raw[n]) continue;
        const int idx[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          mn[a] = std::min(mn[a], idx[a]);
          mx[a] = std::max(mx[a], idx[a]);
        }
      }

  CropReport report;
  if (mx[0] < 0) return report;  // empty mask touches nothing

  const int band[3] = {addon.x, addon.y, addon.z};
  bool lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = mn[a] <= band[a];
    hi[a] = mx[a] >= d[a] - 1 - band[a];
  }

  if (lo[0]) report.transverse.push_back(Side::Anterior);
  if (hi[0]) report.transverse.push_back(Side::Posterior);
  if (lo[1]) report.transverse.push_back(Side::Right);
  if (hi[1]) report.transverse.push_back(Side::Left);

  if (lo[1]) report.coronal.push_back(Side::Right);
  if (hi[1]) report.coronal.push_back(Side::Left);
  if (lo[2]) report.coronal.push_back(Side::Inferior);
  if (hi[2]) report.coronal.push_back(Side::Superior);

  if (lo[0]) report.sagittal.push_back(Side::Anterior);
  if (hi[0]) report.sagittal.push_back(Side::Posterior);
  if (lo[2]) report.sagittal.push_back(Side::Inferior);
  if (hi[2]) report.sagittal.push_back(Side::Superior);

  report.cropped = !(report.transverse.empty() && report.coronal.empty() &&
                     report.sagittal.empty());
  return report;
}

namespace {

BoundEntry bound_for(const Volume<std::int32_t>& labels, const ClassMap& map,
                     const std::string& anatomy, const CropAddon& addon, bool upper,
                     const Registry& registry) {
  BoundEntry entry;
  entry.anatomy = anatomy;

  const std::vector<int> ids = resolve_common_string(map, anatomy, registry);
  if (ids.empty())
    throw DomainError("anatomy '" + anatomy + "' does not resolve to any entry of class map '" +
                      map.task_name + "'");

  MaskVolume mask(labels.dims(), labels.affine(), 0);
  const auto& src = labels.raw();
  auto& dst = mask.raw();
  std::size_t count = 0;
  for (std::size_t v = 0; v < src.size(); ++v) {
    if (std::find(ids.begin(), ids.end(), src[v]) == ids.end()) continue;
    dst[v] = 1;
    ++count;
  }

  if (count == 0) {
    entry.z = -2;
    return entry;
  }
  if (detect_mask_cropping(mask, addon).cropped) {
    entry.z = -1;
    return entry;
  }

  const Eigen::Vector3i d = labels.dims();
  int zmin = d.z(), zmax = -1;
  std::size_t v = 0;
  for (int k = 0; k < d.z(); ++k) {
    const std::size_t plane = static_cast<std::size_t>(d.x()) * d.y();
    bool hit = false;
    for (std::size_t p = 0; p < plane; ++p, ++v)
      if (dst[v]) hit = true;
    if (hit) {
      zmin = std::min(zmin, k);
      zmax = k;
    }
  }
  entry.z = upper ? zmax : zmin;
  return entry;
}

}  // namespace

VolumeBounds define_volume_bounds_by_anatomies(const Volume<std::int32_t>& labels,
                                               const ClassMap& map,
                                               const std::string& upper_anatomy,
                                               const std::string& lower_anatomy,
                                               const CropAddon& addon, DatasetTag* tag,
                                               const std::string& data_id,
                                               const Registry& registry) {
  VolumeBounds bounds;
  bounds.upper = bound_for(labels, map, upper_anatomy, addon, true, registry);
  bounds.lower = bound_for(labels, map, lower_anatomy, addon, false, registry);

  if (tag) {
    const auto note = [&](const BoundEntry& e, const std::string& role) {
      if (e.cropped())
        add_tag_to_data(*tag, role + "BoundCropped", data_id, "Error");
      else if (e.missing())
        add_tag_to_data(*tag, role + "BoundMissing", data_id, "Error");
    };
    note(bounds.upper, "upper");
    note(bounds.lower, "lower");
  }

  if (bounds.valid() && bounds.lower.z > bounds.upper.z)
    throw DomainError("lower bound z=" + std::to_string(bounds.lower.z) +
                      " lies above upper bound z=" + std::to_string(bounds.upper.z));
  return bounds;
}

Label2D segment_bright_objects(const Image2D& img, float bright_threshold) {
  Label2D none = Label2D::Zero(img.rows(), img.cols());
  if (img.size() == 0) return none;
  if (img.maxCoeff() == img.minCoeff()) return none;  // uniform, nothing to segment

  const Binary2D bright = img > bright_threshold;
  if (!bright.any()) return none;

  const Image2D grad = farid_gradient_magnitude(img);
  const float gmax = grad.maxCoeff();
  if (!(gmax > 0.0f)) return none;

  // Cores of the bright objects: bright pixels away from strong edges. The
  // watershed then grows each core back over the whole bright region.
  const Binary2D core = bright && (grad <= 0.25f * gmax);
  const Eigen::ArrayXXd dist = distance_transform_edt(core);
  const Label2D markers = local_maxima_markers(dist);
  const Label2D basins =
      markers.maxCoeff() > 0 ? watershed(dist, markers, bright) : connected_components(bright);

  const int raw_count = basins.maxCoeff();
  Label2D cleaned = Label2D::Zero(img.rows(), img.cols());
  for (int label = 1; label <= raw_count; ++label) {
    const Binary2D region = binary_close_3x3(binary_open_3x3(basins == label));
    for (Eigen::Index c = 0; c < cleaned.cols(); ++c)
      for (Eigen::Index r = 0; r < cleaned.rows(); ++r)
        if (region(r, c) && cleaned(r, c) == 0) cleaned(r, c) = label;
  }

  // Compact to 1..n in scan order.
  std::map<int, int> remap;
  for (Eigen::Index r = 0; r < cleaned.rows(); ++r)
    for (Eigen::Index c = 0; c < cleaned.cols(); ++c) {
      const int old = cleaned(r, c);
      if (old == 0) continue;
      const auto it = remap.emplace(old, static_cast<int>(remap.size()) + 1).first;
      cleaned(r, c) = it->second;
    }
  return cleaned;
}

Image2D coronal_mip_above(const VolumeGrid& vol, int z0) {
  const Eigen::Vector3i d = vol.dims();
  if (d.minCoeff() < 1) throw DomainError("coronal_mip_above: degenerate volume");
  if (z0 < 0 || z0 >= d.z())
    throw DomainError("lower bound z=" + std::to_string(z0) + " outside [0, " +
                      std::to_string(d.z()) + ")");

  // Row 0 is the superior-most plane; the bottom row is the z0 plane.
  // Columns run right to left, matching the coronal view of a PLS+ volume.
  Image2D img(d.z() - z0, d.y());
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    const int k = d.z() - 1 - static_cast<int>(r);
    for (int j = 0; j < d.y(); ++j) {
      float best = std::numeric_limits<float>::lowest();
      for (int i = 0; i < d.x(); ++i) best = std::max(best, vol(i, j, k));
      img(r, j) = best;
    }
  }
  return img;
}

ProsthesisResult detect_hip_prosthesis(const VolumeGrid& vol, int lower_bound, DatasetTag* tag,
                                       const std::string& data_id, float bright_threshold,
                                       double min_area_mm2) {
  ProsthesisResult result;
  result.mip = coronal_mip_above(vol, lower_bound);
  result.labeled = segment_bright_objects(result.mip, bright_threshold);

  const int count = result.labeled.maxCoeff();
  if (count == 0) return result;

  const Eigen::Vector3d spacing = vol.spacing();
  const double pixel_mm2 = spacing.y() * spacing.z();
  const Eigen::Index bottom = result.labeled.rows() - 1;
  for (int label = 1; label <= count; ++label) {
    const double area = (result.labeled == label).count() * pixel_mm2;
    const bool at_bottom = (result.labeled.row(bottom) == label).any();
    if (at_bottom && area >= min_area_mm2)
      result.prosthesis_labels.push_back(label);
    else
      result.other_implant_labels.push_back(label);
  }
  result.detected = !result.prosthesis_labels.empty();
  if (result.detected && tag) add_tag_to_data(*tag, "prosthesisDetected", data_id, "Warning");
  return result;
}

Volume<std::int32_t> connected_components_3d(const MaskVolume& mask, int* count) {
  const Eigen::Vector3i d = mask.dims();
  Volume<std::int32_t> labels(d, mask.affine(), 0);
  const auto& src = mask.raw();
  auto& dst = labels.raw();
  const std::size_t plane = static_cast<std::size_t>(d.x()) * d.y();

  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < src.size(); ++seed) {
    if (!src[seed] || dst[seed]) continue;
    ++next;
    dst[seed] = next;
    stack.assign(1, seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const int i = static_cast<int>(cur % d.x());
      const int j = static_cast<int>((cur / d.x()) % d.y());
      const int k = static_cast<int>(cur / plane);
      for (int dk = -1; dk <= 1; ++dk)
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            if (di == 0 && dj == 0 && dk == 0) continue;
            const int ii = i + di, jj = j + dj, kk = k + dk;
            if (!mask.contains(ii, jj, kk)) continue;
            const std::size_t m = mask.linear_index(ii, jj, kk);
            if (src[m] && !dst[m]) {
              dst[m] = next;
              stack.push_back(m);
            }
          }
    }
  }
  if (count) *count = next;
  return labels;
}

ArmLegSeparation separate_arms_and_legs(const Volume<std::int32_t>& body_labels,
                                        const std::vector<MaskVolume>& arm_bone_masks,
                                        const VolumeBounds& bounds, const CropAddon& addon,
                                        DatasetTag* tag, const std::string& data_id) {
  if (!bounds.valid())
    throw DomainError("separate_arms_and_legs requires valid bounds (upper z=" +
                      std::to_string(bounds.upper.z) +
                      ", lower z=" + std::to_string(bounds.lower.z) + ")");
  const Eigen::Vector3i d = body_labels.dims();
  if (bounds.upper.z >= d.z())
    throw DomainError("upper bound z=" + std::to_string(bounds.upper.z) +
                      " outside the volume (K=" + std::to_string(d.z()) + ")");
  for (const auto& m : arm_bone_masks)
    if (m.dims() != d) throw DomainError("arm-bone mask shape differs from body labels");

  ArmLegSeparation out;
  MaskVolume extremities(d, body_labels.affine(), 0);
  {
    const auto& src = body_labels.raw();
    auto& dst = extremities.raw();
    for (std::size_t v = 0; v < src.size(); ++v) dst[v] = (src[v] == 2) ? 1 : 0;
  }
  int count = 0;
  out.components = connected_components_3d(extremities, &count);

  std::vector<char> is_arm(static_cast<std::size_t>(count) + 1, 0);
  const auto& comp = out.components.raw();
  for (const auto& bone : arm_bone_masks) {
    const auto& b = bone.raw();
    for (std::size_t v = 0; v < comp.size(); ++v)
      if (comp[v] && b[v]) is_arm[static_cast<std::size_t>(comp[v])] = 1;
  }
  for (int id = 1; id <= count; ++id)
    (is_arm[static_cast<std::size_t>(id)] ? out.arm_ids : out.leg_ids).push_back(id);

  // Trunk cropping inside the bound planes; the inferior/superior faces are
  // the bounds themselves, so only lateral/anterior/posterior sides count.
  const int zl = bounds.lower.z, zu = bounds.upper.z;
  MaskVolume trunk(Eigen::Vector3i(d.x(), d.y(), zu - zl + 1), body_labels.affine(), 0);
  for (int k = zl; k <= zu; ++k)
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i)
        trunk(i, j, k - zl) = (body_labels(i, j, k) == 1) ? 1 : 0;
  const std::set<Side> touched = detect_mask_cropping(trunk, addon).touched();
  out.trunk_cropped = touched.count(Side::Anterior) || touched.count(Side::Posterior) ||
                      touched.count(Side::Right) || touched.count(Side::Left);
  if (out.trunk_cropped && tag) add_tag_to_data(*tag, "bodyCropped", data_id, "Warning");
  return out;
}

MaskVolume components_to_mask(const Volume<std::int32_t>& components, const std::vector<int>& ids) {
  MaskVolume mask(components.dims(), components.affine(), 0);
  const auto& src = components.raw();
  auto& dst = mask.raw();
  for (std::size_t v = 0; v < src.size(); ++v)
    dst[v] = std::find(ids.begin(), ids.end(), src[v]) != ids.end() ? 1 : 0;
  return mask;
}

}  // namespace aarchive
