#include "aarchive/features.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "aarchive/errors.hpp"
#include "aarchive/log.hpp"

namespace aarchive {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool name_contains(const std::string& name, const std::string& needle) {
  return name.find(needle) != std::string::npos;
}

/// Linear-interpolation percentile of an ascending-sorted vector.
double percentile_sorted(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct HuSample {
  std::vector<double> values;

  ComponentMetrics metrics(const std::string& anatomy, bool planar, double voxel_mm3,
                           double pixel_mm2) const {
    ComponentMetrics m;
    m.anatomy = anatomy;
    m.voxels = static_cast<long>(values.size());
    m.volume_cm3 = planar ? kNaN : static_cast<double>(m.voxels) * voxel_mm3 / 1000.0;
    m.area_cm2 = planar ? static_cast<double>(m.voxels) * pixel_mm2 / 100.0 : kNaN;
    if (values.empty()) {
      m.mean_hu = kNaN;
      m.median_hu = kNaN;
      return m;
    }
    m.mean_hu = mean_of(values);
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    m.median_hu = (n % 2) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return m;
  }
};

const HuRange& range_or_throw(const HuRangeDict& ranges, const std::string& key) {
  const auto it = ranges.find(key);
  if (it == ranges.end()) throw ConfigError("dict_hu_range is missing the '" + key + "' range");
  if (it->second.low > it->second.high)
    throw ConfigError("HU range '" + key + "' is inverted");
  return it->second;
}

/// Table 3 precedence: normal attenuation wins over the fatty-muscle band,
/// which wins over the wide fat band. Returns 0 normal, 1 low, 2 imat, -1
/// unassigned.
int classify_muscle_hu(double hu, const HuRange& muscle, const HuRange& fatty,
                       const HuRange& fat) {
  if (muscle.contains(hu)) return 0;
  if (fatty.contains(hu)) return 1;
  if (fat.contains(hu)) return 2;
  return -1;
}

}  // namespace

HuRangeDict default_hu_ranges() {
  return {{"muscle", {30.0, 150.0}}, {"fatty_muscle", {-29.0, 29.0}}, {"fat", {-190.0, 30.0}}};
}

void TaskEvaConfig::validate() const {
  const bool has_ub = !ref_obj_ub.empty();
  const bool has_lb = !ref_obj_lb.empty();
  if (!ref_obj.empty() && (has_ub || has_lb))
    throw ConfigError("refObj cannot be combined with refObjUB/refObjLB");
  if (has_ub != has_lb)
    throw ConfigError("refObjUB and refObjLB must be given together");
  for (const auto& [key, range] : dict_hu_range)
    if (range.low > range.high) throw ConfigError("HU range '" + key + "' is inverted");
}

const ComponentMetrics* BodyComposition::find(const std::string& anatomy) const {
  for (const auto& c : components)
    if (c.anatomy == anatomy) return &c;
  return nullptr;
}

int central_plane_of(const Volume<std::int32_t>& labels, const ClassMap& map,
                     const std::string& anatomy, const Registry& registry) {
  const std::vector<int> wanted = resolve_common_string(map, anatomy, registry);
  if (wanted.empty())
    throw DomainError("reference object '" + anatomy + "' does not resolve to any entry of '" +
                      map.task_name + "'");
  int zmin = labels.dims().z(), zmax = -1;
  labels.for_each_index([&](int i, int j, int k) {
    const std::int32_t l = labels(i, j, k);
    if (std::find(wanted.begin(), wanted.end(), l) == wanted.end()) return;
    zmin = std::min(zmin, k);
    zmax = std::max(zmax, k);
  });
  if (zmax < 0)
    throw DomainError("reference object '" + anatomy + "' has no voxels");
  return (zmin + zmax) / 2;
}

BodyComposition body_component_analysis(const VolumeGrid& vol, const Volume<std::int32_t>& labels,
                                        const ClassMap& map, const TaskEvaConfig& config,
                                        const VolumeBounds* bounds, int central_plane,
                                        const Registry& registry) {
  config.validate();
  if (labels.dims() != vol.dims())
    throw DomainError("label volume shape differs from the image");

  BodyComposition out;
  int z0 = 0, z1 = vol.dims().z() - 1;
  if (central_plane >= 0) {
    if (central_plane >= vol.dims().z())
      throw DomainError("central plane index outside the volume");
    out.planar = true;
    out.central_plane = central_plane;
    z0 = z1 = central_plane;
  } else if (bounds != nullptr) {
    if (!bounds->valid())
      throw DomainError("volume bounds are not valid for body composition analysis");
    z0 = bounds->lower.z;
    z1 = bounds->upper.z;
    if (z1 >= vol.dims().z()) throw DomainError("upper bound outside the volume");
  }

  const double voxel_mm3 = vol.voxel_volume_mm3();
  const double pixel_mm2 = vol.spacing().x() * vol.spacing().y();
  const HuRange fat_range = range_or_throw(config.dict_hu_range, "fat");

  std::vector<std::string> muscles;
  if (config.enforce_muscle_range) muscles = registry.muscle_names(map);
  const auto is_muscle_entry = [&](int label) {
    return std::find(muscles.begin(), muscles.end(), map.name_of(label)) != muscles.end();
  };

  for (const std::string& name : config.selected_objs) {
    const std::vector<int> wanted = resolve_common_string(map, name, registry);
    if (wanted.empty())
      throw DomainError("selected object '" + name + "' does not resolve to any entry of '" +
                        map.task_name + "'");
    const bool clip_fat =
        config.enforce_fat_range && name_contains(registry.normalize_anatomy_name(name), "fat");
    const bool split_muscle =
        config.enforce_muscle_range &&
        std::any_of(wanted.begin(), wanted.end(), is_muscle_entry);

    HuSample all;
    for (int k = z0; k <= z1; ++k)
      for (int j = 0; j < vol.dims().y(); ++j)
        for (int i = 0; i < vol.dims().x(); ++i) {
          const std::int32_t l = labels(i, j, k);
          if (std::find(wanted.begin(), wanted.end(), l) == wanted.end()) continue;
          const double hu = vol(i, j, k);
          if (clip_fat && !fat_range.contains(hu)) continue;
          all.values.push_back(hu);
        }
    out.components.push_back(all.metrics(name, out.planar, voxel_mm3, pixel_mm2));

    if (split_muscle) {
      const HuRange& normal = range_or_throw(config.dict_hu_range, "muscle");
      const HuRange& fatty = range_or_throw(config.dict_hu_range, "fatty_muscle");
      HuSample parts[3];
      for (const double hu : all.values) {
        const int cat = classify_muscle_hu(hu, normal, fatty, fat_range);
        if (cat >= 0) parts[cat].values.push_back(hu);
      }
      static const char* kSuffix[3] = {"_normal_attenuation", "_low_attenuation", "_imat"};
      for (int c = 0; c < 3; ++c)
        out.components.push_back(
            parts[c].metrics(name + kSuffix[c], out.planar, voxel_mm3, pixel_mm2));
    }
  }
  return out;
}

MuscleSplit split_muscle_by_hu(const MaskVolume& muscle, const VolumeGrid& vol,
                               const HuRangeDict& ranges) {
  if (muscle.dims() != vol.dims()) throw DomainError("muscle mask shape differs from the image");
  const HuRange& normal = range_or_throw(ranges, "muscle");
  const HuRange& fatty = range_or_throw(ranges, "fatty_muscle");
  const HuRange& fat = range_or_throw(ranges, "fat");

  MuscleSplit split{MaskVolume(muscle.dims(), muscle.affine()),
                    MaskVolume(muscle.dims(), muscle.affine()),
                    MaskVolume(muscle.dims(), muscle.affine())};
  MaskVolume* dest[3] = {&split.normal, &split.low_attenuation, &split.imat};
  for (std::size_t idx = 0; idx < muscle.size(); ++idx) {
    if (!muscle.raw()[idx]) continue;
    const int cat = classify_muscle_hu(vol.raw()[idx], normal, fatty, fat);
    if (cat >= 0) dest[cat]->raw()[idx] = 1;
  }
  return split;
}

MaskVolume enforce_fat_range(const MaskVolume& mask, const VolumeGrid& vol,
                             const HuRangeDict& ranges) {
  if (mask.dims() != vol.dims()) throw DomainError("fat mask shape differs from the image");
  const HuRange& fat = range_or_throw(ranges, "fat");
  MaskVolume out(mask.dims(), mask.affine());
  for (std::size_t idx = 0; idx < mask.size(); ++idx)
    out.raw()[idx] = mask.raw()[idx] && fat.contains(vol.raw()[idx]) ? 1 : 0;
  return out;
}

double optimal_hist_bin_width(const std::vector<double>& values,
                              const std::vector<int>& rounding_targets) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 3) throw DomainError("bin width optimization needs at least 3 values");
  if (rounding_targets.empty()) throw ConfigError("rounding targets must not be empty");
  for (const double v : values)
    if (!std::isfinite(v)) throw DomainError("bin width optimization needs finite values");

  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double range = *mx_it - *mn_it;
  if (range == 0.0) throw DomainError("bin width optimization needs a non-zero value range");

  const double mu = mean_of(values);
  double m2 = 0.0, m3 = 0.0;
  for (const double v : values) {
    const double d = v - mu;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  const double g1 = m3 / std::pow(m2, 1.5);
  const double sg1 = std::sqrt(6.0 * (n - 2.0) / ((n + 1.0) * (n + 3.0)));
  const double bins = 1.0 + std::log2(n) + std::log2(1.0 + std::abs(g1) / sg1);
  const double raw = range / bins;

  const auto rounded = static_cast<double>(std::llround(raw));
  int best = rounding_targets.front();
  for (const int t : rounding_targets)
    if (std::abs(rounded - t) < std::abs(rounded - best)) best = t;
  return static_cast<double>(best);
}

void ExtractionParams::validate() const {
  if (!(bin_width > 0.0)) throw ConfigError("binWidth must be positive");
  if (kernel_radius < 1) throw ConfigError("kernelRadius must be at least 1");
  if (voxel_batch < 1) throw ConfigError("voxelBatch must be at least 1");
}

namespace {

double yaml_double(const YAML::Node& node, const std::string& path) {
  try {
    return node.as<double>();
  } catch (const YAML::Exception&) {
    const auto text = node.as<std::string>("");
    std::string folded;
    for (const char c : text)
      folded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (folded == "nan" || folded == ".nan")
      return std::numeric_limits<double>::quiet_NaN();
    throw ConfigError("value of '" + path + "' is not a number");
  }
}

}  // namespace

ExtractionParams load_extraction_params(const std::string& yaml_path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(yaml_path);
  } catch (const YAML::Exception& e) {
    throw IoError("cannot read extraction params '" + yaml_path + "': " + e.what());
  }
  if (!root.IsMap()) throw ConfigError("extraction params must be a YAML mapping");

  ExtractionParams params;
  for (const auto& section : root) {
    const auto key = section.first.as<std::string>();
    const YAML::Node body = section.second;
    if (key == "imageType") {
      for (const auto& entry : body)
        if (entry.first.as<std::string>() != "Original")
          throw UnsupportedError("imageType." + entry.first.as<std::string>() +
                                 " is not supported; only Original");
    } else if (key == "featureClass") {
      for (const auto& entry : body)
        if (entry.first.as<std::string>() != "firstorder")
          throw UnsupportedError("featureClass." + entry.first.as<std::string>() +
                                 " is not supported; only firstorder");
    } else if (key == "setting") {
      for (const auto& entry : body) {
        const auto name = entry.first.as<std::string>();
        if (name == "binWidth")
          params.bin_width = yaml_double(entry.second, "setting.binWidth");
        else if (name == "label")
          params.label = entry.second.as<int>();
        else if (name == "force2D") {
          if (entry.second.as<bool>())
            throw UnsupportedError("setting.force2D=true is not supported");
        } else
          throw ConfigError("unknown key 'setting." + name + "'");
      }
    } else if (key == "voxelSetting") {
      for (const auto& entry : body) {
        const auto name = entry.first.as<std::string>();
        if (name == "kernelRadius")
          params.kernel_radius = entry.second.as<int>();
        else if (name == "maskedKernel")
          params.masked_kernel = entry.second.as<bool>();
        else if (name == "initValue")
          params.init_value = yaml_double(entry.second, "voxelSetting.initValue");
        else if (name == "voxelBatch")
          params.voxel_batch = entry.second.as<long>();
        else
          throw ConfigError("unknown key 'voxelSetting." + name + "'");
      }
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }

  if (std::isnan(params.init_value)) {
    log::warn("initValue NaN replaced by 0");
    params.init_value = 0.0;
  }
  params.validate();
  return params;
}

const std::array<std::string, 17>& first_order_feature_names() {
  static const std::array<std::string, 17> kNames = {
      "energy",     "mean", "median", "variance",     "skewness",     "kurtosis",
      "entropy",    "uniformity",    "minimum",      "maximum",      "range",
      "percentile10", "percentile90", "iqr", "mad", "rmad", "rms"};
  return kNames;
}

const VoxelFeatureMap* FeatureMapStack::find(const std::string& condition) const {
  for (const auto& c : conditions)
    if (c.condition == condition) return &c;
  return nullptr;
}

std::vector<std::string> FeatureMapStack::condition_names() const {
  std::vector<std::string> names;
  names.reserve(conditions.size());
  for (const auto& c : conditions) names.push_back(c.condition);
  return names;
}

namespace {

/// First-order features of one neighborhood; `vals` is clobbered (sorted).
/// Histogram features discretize with fixed bins of `bin_width` anchored at
/// the neighborhood minimum; the rest run on raw intensities.
std::array<double, 17> first_order_features(std::vector<double>& vals, double bin_width) {
  const auto n = static_cast<double>(vals.size());
  double s1 = 0.0, s2 = 0.0;
  for (const double v : vals) {
    s1 += v;
    s2 += v * v;
  }
  const double mu = s1 / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, abs_dev = 0.0;
  for (const double v : vals) {
    const double d = v - mu;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
    abs_dev += std::abs(d);
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;

  std::sort(vals.begin(), vals.end());
  const double vmin = vals.front();
  const double vmax = vals.back();
  const double median =
      (vals.size() % 2) ? vals[vals.size() / 2]
                        : 0.5 * (vals[vals.size() / 2 - 1] + vals[vals.size() / 2]);
  const double p10 = percentile_sorted(vals, 10.0);
  const double p90 = percentile_sorted(vals, 90.0);
  const double iqr = percentile_sorted(vals, 75.0) - percentile_sorted(vals, 25.0);

  double robust_sum = 0.0;
  long robust_n = 0;
  for (const double v : vals) {
    if (v < p10 || v > p90) continue;
    robust_sum += v;
    ++robust_n;
  }
  double rmad = 0.0;
  if (robust_n > 0) {
    const double robust_mu = robust_sum / static_cast<double>(robust_n);
    double acc = 0.0;
    for (const double v : vals)
      if (v >= p10 && v <= p90) acc += std::abs(v - robust_mu);
    rmad = acc / static_cast<double>(robust_n);
  }

  const auto nbins = static_cast<std::size_t>(std::floor((vmax - vmin) / bin_width)) + 1;
  std::vector<double> counts(nbins, 0.0);
  for (const double v : vals) {
    auto b = static_cast<std::size_t>(std::floor((v - vmin) / bin_width));
    if (b >= nbins) b = nbins - 1;
    counts[b] += 1.0;
  }
  double entropy = 0.0, uniformity = 0.0;
  for (const double c : counts) {
    if (c == 0.0) continue;
    const double p = c / n;
    entropy -= p * std::log2(p);
    uniformity += p * p;
  }

  return {s2,
          mu,
          median,
          m2,
          m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0,
          m2 > 0.0 ? m4 / (m2 * m2) : 0.0,
          entropy,
          uniformity,
          vmin,
          vmax,
          vmax - vmin,
          p10,
          p90,
          iqr,
          abs_dev / n,
          rmad,
          std::sqrt(s2 / n)};
}

std::string condition_name(int label, int kernel_radius, double bin_width) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "label=%d|kernelRadius=%d|binWidth=%g", label, kernel_radius,
                bin_width);
  return buf;
}

}  // namespace

FeatureMapStack extract_voxel_features(const VolumeGrid& vol, const Volume<std::int32_t>& labels,
                                       const ExtractionParams& params,
                                       const std::vector<int>& selected_labels,
                                       const std::vector<double>& preset_bin_widths) {
  ExtractionParams p = params;
  if (std::isnan(p.init_value)) p.init_value = 0.0;
  p.validate();
  if (labels.dims() != vol.dims())
    throw DomainError("label volume shape differs from the image");
  if (selected_labels.empty()) throw ConfigError("selected_labels must not be empty");
  if (!preset_bin_widths.empty() && preset_bin_widths.size() != selected_labels.size())
    throw ConfigError("selected_labels and preset_bin_widths must have equal length");

  const Eigen::Vector3i d = vol.dims();
  const std::size_t sy = static_cast<std::size_t>(d.x());
  const std::size_t sz = sy * static_cast<std::size_t>(d.y());
  const int radius = p.kernel_radius;

  FeatureMapStack stack;
  for (std::size_t li = 0; li < selected_labels.size(); ++li) {
    const int label = selected_labels[li];
    const double width = preset_bin_widths.empty() ? p.bin_width : preset_bin_widths[li];
    if (!(width > 0.0)) throw ConfigError("bin width must be positive");

    std::vector<char> voi(vol.size(), 0);
    VoxelFeatureMap fmap;
    fmap.condition = condition_name(label, radius, width);
    fmap.label = label;
    fmap.bin_width = width;
    fmap.kernel_radius = radius;
    fmap.shape = d;
    labels.for_each_index([&](int i, int j, int k) {
      if (labels(i, j, k) != label) return;
      voi[labels.linear_index(i, j, k)] = 1;
      fmap.coords.emplace_back(i, j, k);
    });
    if (fmap.coords.empty())
      throw DomainError("label " + std::to_string(label) + " has no voxels");

    const std::size_t nvox = fmap.coords.size();
    std::array<std::vector<double>, 17> columns;
    for (auto& col : columns) col.assign(nvox, p.init_value);

    const auto batch = static_cast<std::size_t>(p.voxel_batch);
    const std::size_t nbatch = (nvox + batch - 1) / batch;
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
      std::vector<double> vals;
      vals.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1) *
                   (2 * radius + 1));
      for (std::size_t b = next.fetch_add(1); b < nbatch; b = next.fetch_add(1)) {
        const std::size_t end = std::min(nvox, (b + 1) * batch);
        for (std::size_t v = b * batch; v < end; ++v) {
          const Eigen::Vector3i& c = fmap.coords[v];
          vals.clear();
          for (int dk = -radius; dk <= radius; ++dk) {
            const int k = c.z() + dk;
            if (k < 0 || k >= d.z()) continue;
            for (int dj = -radius; dj <= radius; ++dj) {
              const int j = c.y() + dj;
              if (j < 0 || j >= d.y()) continue;
              const std::size_t row = sy * static_cast<std::size_t>(j) +
                                      sz * static_cast<std::size_t>(k);
              for (int di = -radius; di <= radius; ++di) {
                const int i = c.x() + di;
                if (i < 0 || i >= d.x()) continue;
                const std::size_t idx = static_cast<std::size_t>(i) + row;
                if (p.masked_kernel && !voi[idx]) continue;
                vals.push_back(vol.raw()[idx]);
              }
            }
          }
          const std::array<double, 17> row = first_order_features(vals, width);
          for (std::size_t f = 0; f < row.size(); ++f) columns[f][v] = row[f];
        }
      }
    };

    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t nthreads = std::min(hw, nbatch);
    if (nthreads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(nthreads);
      for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    const auto& names = first_order_feature_names();
    for (std::size_t f = 0; f < names.size(); ++f)
      fmap.features.emplace(names[f], std::move(columns[f]));
    stack.conditions.push_back(std::move(fmap));
  }
  return stack;
}

Volume<double> to_dense(const VoxelFeatureMap& fmap, const std::string& feature, double fill) {
  const auto it = fmap.features.find(feature);
  if (it == fmap.features.end())
    throw DomainError("feature '" + feature + "' not present in condition '" + fmap.condition +
                      "'");
  Volume<double> out(fmap.shape, Eigen::Matrix4d::Identity(), fill);
  for (std::size_t v = 0; v < fmap.coords.size(); ++v) {
    const Eigen::Vector3i& c = fmap.coords[v];
    out(c.x(), c.y(), c.z()) = it->second[v];
  }
  return out;
}

Volume<double> reconstruct_global_feature_map(const Volume<double>& fmap_cropped,
                                              const Eigen::Vector3i& bbox_origin,
                                              const Eigen::Vector3i& bbox_extent,
                                              int kernel_radius, const Eigen::Vector3i& full_shape,
                                              double fill) {
  if (kernel_radius < 0) throw DomainError("kernel radius must be non-negative");
  const Eigen::Vector3i expected =
      bbox_extent + Eigen::Vector3i::Constant(2 * kernel_radius);
  if (fmap_cropped.dims() != expected)
    throw DomainError("cropped feature map shape does not match bbox extent plus padding");
  if ((bbox_origin.array() < 0).any() ||
      ((bbox_origin + bbox_extent).array() > full_shape.array()).any())
    throw DomainError("bounding box leaves the volume");

  Volume<double> out(full_shape, Eigen::Matrix4d::Identity(), fill);
  for (int az = 0; az < bbox_extent.z(); ++az)
    for (int ay = 0; ay < bbox_extent.y(); ++ay)
      for (int ax = 0; ax < bbox_extent.x(); ++ax)
        out(bbox_origin.x() + ax, bbox_origin.y() + ay, bbox_origin.z() + az) =
            fmap_cropped(ax + kernel_radius, ay + kernel_radius, az + kernel_radius);
  return out;
}

std::vector<double> zscore(const std::vector<double>& x) {
  if (x.empty()) throw DomainError("cannot standardize an empty vector");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mn == *mx) throw DomainError("cannot standardize a constant vector");
  const double mu = mean_of(x);
  double var = 0.0;
  for (const double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  const double sd = std::sqrt(var);
  std::vector<double> z;
  z.reserve(x.size());
  for (const double v : x) z.push_back((v - mu) / sd);
  return z;
}

SapResult sap_pool(const FeatureMapStack& stack, const std::string& feature,
                   const std::vector<std::string>& subset) {
  if (subset.empty()) throw DomainError("SAP subset must not be empty");

  std::vector<const VoxelFeatureMap*> maps;
  for (const std::string& name : subset) {
    const VoxelFeatureMap* m = stack.find(name);
    if (m == nullptr) throw DomainError("condition '" + name + "' not in the stack");
    maps.push_back(m);
  }
  const std::size_t n = maps.front()->size();
  if (n < 2) throw DomainError("SAP needs at least 2 VOI voxels");
  for (const VoxelFeatureMap* m : maps)
    if (m->size() != n || m->coords != maps.front()->coords)
      throw DomainError("SAP subset conditions cover different VOIs");

  const double ln_n = std::log(static_cast<double>(n));
  std::vector<std::vector<double>> z;
  for (const VoxelFeatureMap* m : maps) {
    const auto it = m->features.find(feature);
    if (it == m->features.end())
      throw DomainError("feature '" + feature + "' not present in condition '" + m->condition +
                        "'");
    std::vector<double> scaled = it->second;
    for (double& v : scaled) v /= ln_n;
    z.push_back(zscore(scaled));
  }

  double mean_s = 0.0;
  for (const auto& zi : z)
    for (const double v : zi) mean_s += v;
  mean_s /= static_cast<double>(z.size() * n);
  double var_s = 0.0;
  for (const auto& zi : z)
    for (const double v : zi) var_s += (v - mean_s) * (v - mean_s);
  var_s /= static_cast<double>(z.size() * n);
  const double sd_s = std::sqrt(var_s);

  SapResult result;
  result.subset = subset;
  result.pooled.assign(n, 0.0);
  const double k = static_cast<double>(z.size());
  for (const auto& zi : z)
    for (std::size_t v = 0; v < n; ++v)
      result.pooled[v] += (zi[v] - mean_s) / sd_s / k;
  return result;
}

void export_features_csv(const FeatureMapStack& stack, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "x,y,z";
  for (const auto& name : first_order_feature_names()) out << ',' << name;
  out << ",condition\n";

  char buf[32];
  for (const auto& fmap : stack.conditions) {
    std::vector<const std::vector<double>*> cols;
    for (const auto& name : first_order_feature_names())
      cols.push_back(&fmap.features.at(name));
    for (std::size_t v = 0; v < fmap.coords.size(); ++v) {
      const Eigen::Vector3i& c = fmap.coords[v];
      out << c.x() << ',' << c.y() << ',' << c.z();
      for (const auto* col : cols) {
        std::snprintf(buf, sizeof buf, "%.17g", (*col)[v]);
        out << ',' << buf;
      }
      out << ',' << fmap.condition << '\n';
    }
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace aarchive
