#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "aarchive/errors.hpp"
#include "aarchive/features.hpp"

using namespace aarchive;

namespace {

std::string temp_file(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

// ---------------------------------------------------------------------------
// Brute-force oracle: every feature recomputed with straight loops and naive
// formulas, used to cross-check the extraction pipeline on small phantoms.

std::vector<double> oracle_neighborhood(const VolumeGrid& vol, const Volume<std::int32_t>& labels,
                                        int label, const Eigen::Vector3i& c, int radius,
                                        bool masked) {
  std::vector<double> vals;
  for (int k = 0; k < vol.dims().z(); ++k)
    for (int j = 0; j < vol.dims().y(); ++j)
      for (int i = 0; i < vol.dims().x(); ++i) {
        const int cheb =
            std::max({std::abs(i - c.x()), std::abs(j - c.y()), std::abs(k - c.z())});
        if (cheb > radius) continue;
        if (masked && labels(i, j, k) != label) continue;
        vals.push_back(vol(i, j, k));
      }
  return vals;
}

double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double pos = q / 100.0 * (static_cast<double>(v.size()) - 1.0);
  const double lo = std::floor(pos);
  const auto idx = static_cast<std::size_t>(lo);
  if (idx + 1 >= v.size()) return v.back();
  return v[idx] + (pos - lo) * (v[idx + 1] - v[idx]);
}

std::map<std::string, double> oracle_features(const std::vector<double>& vals, double width) {
  const auto n = static_cast<double>(vals.size());
  std::map<std::string, double> f;

  double energy = 0.0;
  for (double v : vals) energy += v * v;
  f["energy"] = energy;
  f["rms"] = std::sqrt(energy / n);

  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= n;
  f["mean"] = mean;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
  for (double v : vals) {
    m2 += std::pow(v - mean, 2);
    m3 += std::pow(v - mean, 3);
    m4 += std::pow(v - mean, 4);
    mad += std::abs(v - mean);
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  f["variance"] = m2;
  f["skewness"] = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  f["kurtosis"] = m2 > 0 ? m4 / (m2 * m2) : 0.0;
  f["mad"] = mad / n;

  std::vector<double> sorted = vals;
  std::sort(sorted.begin(), sorted.end());
  f["minimum"] = sorted.front();
  f["maximum"] = sorted.back();
  f["range"] = sorted.back() - sorted.front();
  f["median"] = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                  : 0.5 * (sorted[sorted.size() / 2 - 1] +
                                           sorted[sorted.size() / 2]);
  const double p10 = oracle_percentile(vals, 10.0);
  const double p90 = oracle_percentile(vals, 90.0);
  f["percentile10"] = p10;
  f["percentile90"] = p90;
  f["iqr"] = oracle_percentile(vals, 75.0) - oracle_percentile(vals, 25.0);

  std::vector<double> robust;
  for (double v : vals)
    if (v >= p10 && v <= p90) robust.push_back(v);
  if (robust.empty()) {
    f["rmad"] = 0.0;
  } else {
    double rmu = 0.0;
    for (double v : robust) rmu += v;
    rmu /= static_cast<double>(robust.size());
    double acc = 0.0;
    for (double v : robust) acc += std::abs(v - rmu);
    f["rmad"] = acc / static_cast<double>(robust.size());
  }

  std::map<long, double> hist;
  const double base = sorted.front();
  for (double v : vals) hist[static_cast<long>(std::floor((v - base) / width))] += 1.0;
  double entropy = 0.0, uniformity = 0.0;
  for (const auto& [bin, count] : hist) {
    const double p = count / n;
    entropy -= p * std::log2(p);
    uniformity += p * p;
  }
  f["entropy"] = entropy;
  f["uniformity"] = uniformity;
  return f;
}

VolumeGrid pseudo_volume(const Eigen::Vector3i& dims) {
  VolumeGrid vol(dims, Eigen::Matrix4d::Identity());
  vol.for_each_index([&](int i, int j, int k) {
    const long h = (static_cast<long>(i) * 7919 + static_cast<long>(j) * 104729 +
                    static_cast<long>(k) * 1299709) %
                   2000;
    vol(i, j, k) = static_cast<float>(h - 500);
  });
  return vol;
}

}  // namespace

TEST_CASE("default HU ranges match the published table") {
  const HuRangeDict r = default_hu_ranges();
  CHECK(r.at("muscle").low == 30.0);
  CHECK(r.at("muscle").high == 150.0);
  CHECK(r.at("fatty_muscle").low == -29.0);
  CHECK(r.at("fatty_muscle").high == 29.0);
  CHECK(r.at("fat").low == -190.0);
  CHECK(r.at("fat").high == 30.0);
}

TEST_CASE("task config validation") {
  TaskEvaConfig config;
  config.ref_obj = "vertebrae_L3";
  CHECK_NOTHROW(config.validate());

  config.ref_obj_ub = "vertebrae_L1";
  config.ref_obj_lb = "pelvic";
  CHECK_THROWS_AS(config.validate(), ConfigError);

  config.ref_obj.clear();
  CHECK_NOTHROW(config.validate());

  config.ref_obj_lb.clear();
  CHECK_THROWS_AS(config.validate(), ConfigError);

  config = TaskEvaConfig{};
  config.dict_hu_range["fat"] = {40.0, -40.0};
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("muscle split follows range precedence and partitions the mask") {
  const Eigen::Vector3i dims{8, 1, 1};
  VolumeGrid vol(dims, Eigen::Matrix4d::Identity());
  MaskVolume muscle(dims, Eigen::Matrix4d::Identity());
  const float hu[8] = {100.0f, 0.0f, -100.0f, 200.0f, 30.0f, 29.0f, -29.5f, -400.0f};
  for (int i = 0; i < 8; ++i) {
    vol(i, 0, 0) = hu[i];
    muscle(i, 0, 0) = i < 7;  // the -400 voxel stays outside the muscle mask
  }

  const MuscleSplit split = split_muscle_by_hu(muscle, vol);

  CHECK(split.normal(0, 0, 0) == 1);           // 100 HU
  CHECK(split.low_attenuation(1, 0, 0) == 1);  // 0 HU
  CHECK(split.imat(2, 0, 0) == 1);             // -100 HU
  // 200 HU is outside every range
  CHECK((split.normal(3, 0, 0) | split.low_attenuation(3, 0, 0) | split.imat(3, 0, 0)) == 0);
  // 30 HU sits in both the muscle and fat ranges; normal attenuation wins
  CHECK(split.normal(4, 0, 0) == 1);
  CHECK(split.imat(4, 0, 0) == 0);
  // 29 HU is in both fatty-muscle and fat ranges; fatty muscle wins
  CHECK(split.low_attenuation(5, 0, 0) == 1);
  CHECK(split.imat(5, 0, 0) == 0);
  // -29.5 HU only matches the fat range
  CHECK(split.imat(6, 0, 0) == 1);

  for (int i = 0; i < 8; ++i) {
    const int total =
        split.normal(i, 0, 0) + split.low_attenuation(i, 0, 0) + split.imat(i, 0, 0);
    CHECK(total <= 1);                          // pairwise disjoint
    if (total == 1) CHECK(muscle(i, 0, 0) == 1);  // contained in the input mask
  }
}

TEST_CASE("enforce_fat_range clips the mask to the fat HU window") {
  const Eigen::Vector3i dims{4, 1, 1};
  VolumeGrid vol(dims, Eigen::Matrix4d::Identity());
  MaskVolume mask(dims, Eigen::Matrix4d::Identity(), 1);
  vol(0, 0, 0) = -400.0f;
  vol(1, 0, 0) = -100.0f;
  vol(2, 0, 0) = 30.0f;
  vol(3, 0, 0) = 31.0f;

  const MaskVolume clipped = enforce_fat_range(mask, vol);
  CHECK(clipped(0, 0, 0) == 0);
  CHECK(clipped(1, 0, 0) == 1);
  CHECK(clipped(2, 0, 0) == 1);
  CHECK(clipped(3, 0, 0) == 0);

  const MaskVolume in_range = enforce_fat_range(clipped, vol);
  CHECK(in_range.raw() == clipped.raw());

  MaskVolume empty(dims, Eigen::Matrix4d::Identity());
  CHECK(count_nonzero(enforce_fat_range(empty, vol)) == 0);
}

TEST_CASE("body composition volume, bounds window and muscle rows") {
  const auto& registry = Registry::builtin();
  const ClassMap map = registry.load_class_map("tissue_types", 2);

  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  affine(0, 0) = affine(1, 1) = affine(2, 2) = 2.0;  // 2 mm isotropic
  const Eigen::Vector3i dims{20, 20, 20};
  VolumeGrid vol(dims, affine, -80.0f);
  Volume<std::int32_t> labels(dims, affine);

  const int fat_label = *map.label_of("subcutaneous_fat");
  const int muscle_label = *map.label_of("skeletal_muscle");
  // 10x10x10 fat box spanning z in [5, 14]
  for (int k = 5; k < 15; ++k)
    for (int j = 2; j < 12; ++j)
      for (int i = 2; i < 12; ++i) labels(i, j, k) = fat_label;
  // muscle column with a known HU mix
  for (int k = 5; k < 15; ++k) {
    labels(15, 15, k) = muscle_label;
    vol(15, 15, k) = (k % 2) ? 100.0f : -10.0f;  // alternate normal / fatty
  }

  TaskEvaConfig config;
  config.selected_objs = {"subcutaneous_fat", "skeletal_muscle"};

  SUBCASE("whole volume, J=1000 at 2 mm gives 8 cm3") {
    const BodyComposition bc = body_component_analysis(vol, labels, map, config);
    const ComponentMetrics* fat = bc.find("subcutaneous_fat");
    REQUIRE(fat != nullptr);
    CHECK(fat->voxels == 1000);
    CHECK(fat->volume_cm3 == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(fat->mean_hu == doctest::Approx(-80.0));
    CHECK(fat->median_hu == doctest::Approx(-80.0));
    CHECK(std::isnan(fat->area_cm2));
    CHECK_FALSE(bc.planar);
  }

  SUBCASE("bounds restrict the z window") {
    VolumeBounds bounds;
    bounds.upper = {"vertebrae_L1", 9};
    bounds.lower = {"pelvic", 5};
    const BodyComposition bc = body_component_analysis(vol, labels, map, config, &bounds);
    const ComponentMetrics* fat = bc.find("subcutaneous_fat");
    REQUIRE(fat != nullptr);
    CHECK(fat->voxels == 500);  // z in [5, 9]
    CHECK(fat->volume_cm3 == doctest::Approx(4.0).epsilon(1e-12));
  }

  SUBCASE("invalid bounds are rejected") {
    VolumeBounds bounds;
    bounds.upper = {"vertebrae_L1", -1};
    bounds.lower = {"pelvic", 5};
    CHECK_THROWS_AS(body_component_analysis(vol, labels, map, config, &bounds), DomainError);
  }

  SUBCASE("muscle rows are appended when the range is enforced") {
    config.enforce_muscle_range = true;
    const BodyComposition bc = body_component_analysis(vol, labels, map, config);
    const ComponentMetrics* muscle = bc.find("skeletal_muscle");
    const ComponentMetrics* normal = bc.find("skeletal_muscle_normal_attenuation");
    const ComponentMetrics* low = bc.find("skeletal_muscle_low_attenuation");
    const ComponentMetrics* imat = bc.find("skeletal_muscle_imat");
    REQUIRE(muscle != nullptr);
    REQUIRE(normal != nullptr);
    REQUIRE(low != nullptr);
    REQUIRE(imat != nullptr);
    CHECK(muscle->voxels == 10);
    CHECK(normal->voxels == 5);  // 100 HU planes
    CHECK(low->voxels == 5);     // -10 HU planes
    CHECK(imat->voxels == 0);
    // fat rows are not split
    CHECK(bc.find("subcutaneous_fat_imat") == nullptr);
  }

  SUBCASE("fat clipping removes out-of-range voxels") {
    vol(2, 2, 5) = -400.0f;
    config.enforce_fat_range = true;
    const BodyComposition bc = body_component_analysis(vol, labels, map, config);
    CHECK(bc.find("subcutaneous_fat")->voxels == 999);
    CHECK(bc.find("skeletal_muscle")->voxels == 10);  // muscles are untouched
  }

  SUBCASE("unresolvable selection fails") {
    config.selected_objs = {"flux_capacitor"};
    CHECK_THROWS_AS(body_component_analysis(vol, labels, map, config), DomainError);
  }
}

TEST_CASE("central plane and 2D metrics") {
  const auto& registry = Registry::builtin();
  const ClassMap map = registry.load_class_map("tissue_types", 2);

  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  affine(0, 0) = affine(1, 1) = affine(2, 2) = 2.0;
  const Eigen::Vector3i dims{24, 24, 24};
  VolumeGrid vol(dims, affine, 40.0f);
  Volume<std::int32_t> labels(dims, affine);

  const int muscle_label = *map.label_of("skeletal_muscle");
  for (int k = 10; k <= 20; ++k)
    for (int j = 4; j < 9; ++j)
      for (int i = 4; i < 10; ++i) labels(i, j, k) = muscle_label;  // 6x5 per plane

  const int plane = central_plane_of(labels, map, "skeletal_muscle");
  CHECK(plane == 15);

  TaskEvaConfig config;
  config.selected_objs = {"skeletal_muscle"};
  const BodyComposition bc =
      body_component_analysis(vol, labels, map, config, nullptr, plane);
  CHECK(bc.planar);
  CHECK(bc.central_plane == 15);
  const ComponentMetrics* muscle = bc.find("skeletal_muscle");
  REQUIRE(muscle != nullptr);
  CHECK(muscle->voxels == 30);
  CHECK(muscle->area_cm2 == doctest::Approx(30 * 4.0 / 100.0).epsilon(1e-12));
  CHECK(muscle->mean_hu == doctest::Approx(40.0));
  CHECK(std::isnan(muscle->volume_cm3));

  // odd span floors the midpoint
  for (int j = 4; j < 9; ++j)
    for (int i = 4; i < 10; ++i) labels(i, j, 21) = muscle_label;
  CHECK(central_plane_of(labels, map, "skeletal_muscle") == 15);  // (10+21)/2

  CHECK_THROWS_AS(central_plane_of(labels, map, "torso_fat"), DomainError);
  CHECK_THROWS_AS(
      body_component_analysis(vol, labels, map, config, nullptr, dims.z()), DomainError);
}

TEST_CASE("bilateral common strings aggregate into one row") {
  const auto& registry = Registry::builtin();
  const ClassMap map = registry.load_class_map("total", 2);

  const Eigen::Vector3i dims{10, 10, 10};
  VolumeGrid vol(dims, Eigen::Matrix4d::Identity(), 250.0f);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity());
  labels(1, 1, 1) = *map.label_of("femur_left");
  labels(2, 2, 2) = *map.label_of("femur_right");
  labels(3, 3, 3) = *map.label_of("femur_right");

  TaskEvaConfig config;
  config.selected_objs = {"femur"};
  const BodyComposition bc = body_component_analysis(vol, labels, map, config);
  REQUIRE(bc.components.size() == 1);
  CHECK(bc.components[0].anatomy == "femur");
  CHECK(bc.components[0].voxels == 3);
}

TEST_CASE("Doane bin width: paper rounding examples") {
  // Symmetric ramps have zero skewness, so n=64 gives exactly 7 Doane bins
  // and the raw width equals range/7.
  std::vector<double> values(64);
  for (int i = 0; i < 64; ++i) values[i] = i * (16.1 / 63.0);  // raw width 2.3
  CHECK(optimal_hist_bin_width(values) == 2.0);

  for (int i = 0; i < 64; ++i) values[i] = i * (117.6 / 63.0);  // raw width 16.8
  CHECK(optimal_hist_bin_width(values) == 20.0);
}

TEST_CASE("Doane bin width: frozen reference values") {
  // Expectations computed independently with numpy (population skewness,
  // sigma_g1 = sqrt(6(n-2)/((n+1)(n+3))), width = ptp/bins, then the
  // integer+preferred-value rounding).
  std::vector<double> a(1000);
  for (int i = 0; i < 1000; ++i) a[i] = 10.0 * std::sin(i) + i % 7;
  CHECK(optimal_hist_bin_width(a) == 2.0);  // raw 2.369014629529

  std::vector<double> b(500);
  for (long i = 0; i < 500; ++i) b[i] = static_cast<double>(i * i % 977) * 0.35 - 120.0;
  CHECK(optimal_hist_bin_width(b) == 40.0);  // raw 32.716539476945 -> 33 -> 40

  std::vector<double> c(200);
  for (int i = 0; i < 200; ++i) c[i] = -std::log(1.0 - (i + 0.5) / 200.0) * 60.0;
  CHECK(optimal_hist_bin_width(c) == 20.0);  // raw 29.439245047873 -> 29 -> 20

  // custom targets snap to the exact integer when offered
  CHECK(optimal_hist_bin_width(b, {33}) == 33.0);
}

TEST_CASE("Doane bin width: error cases") {
  CHECK_THROWS_AS(optimal_hist_bin_width({1.0, 2.0}), DomainError);
  CHECK_THROWS_AS(optimal_hist_bin_width({5.0, 5.0, 5.0}), DomainError);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(optimal_hist_bin_width({1.0, 2.0, inf}), DomainError);
  CHECK_THROWS_AS(optimal_hist_bin_width({1.0, 2.0, 3.0}, {}), ConfigError);
}

TEST_CASE("extraction params YAML round-trip") {
  const std::string path = temp_file("aarchive_params.yaml");
  {
    std::ofstream out(path);
    out << "imageType:\n"
           "  Original: {}\n"
           "featureClass:\n"
           "  firstorder:\n"
           "setting:\n"
           "  binWidth: 25\n"
           "  force2D: false\n"
           "  label: 1\n"
           "voxelSetting:\n"
           "  kernelRadius: 2\n"
           "  maskedKernel: true\n"
           "  initValue: 0\n"
           "  voxelBatch: 10000\n";
  }
  const ExtractionParams params = load_extraction_params(path);
  CHECK(params.bin_width == 25.0);
  CHECK(params.label == 1);
  CHECK(params.kernel_radius == 2);
  CHECK(params.masked_kernel);
  CHECK(params.init_value == 0.0);
  CHECK(params.voxel_batch == 10000);
  std::filesystem::remove(path);
}

TEST_CASE("extraction params YAML rejections and NaN repair") {
  const auto write = [](const std::string& body) {
    const std::string path = temp_file("aarchive_params_bad.yaml");
    std::ofstream out(path);
    out << body;
    return path;
  };

  std::string path = write("voxelSetting:\n  initValue: .nan\n");
  CHECK(load_extraction_params(path).init_value == 0.0);

  path = write("setting:\n  foo: 1\n");
  CHECK_THROWS_WITH_AS(load_extraction_params(path), "unknown key 'setting.foo'", ConfigError);

  path = write("bogus:\n  a: 1\n");
  CHECK_THROWS_AS(load_extraction_params(path), ConfigError);

  path = write("featureClass:\n  glcm:\n");
  CHECK_THROWS_AS(load_extraction_params(path), UnsupportedError);

  path = write("setting:\n  force2D: true\n");
  CHECK_THROWS_AS(load_extraction_params(path), UnsupportedError);

  path = write("imageType:\n  Wavelet: {}\n");
  CHECK_THROWS_AS(load_extraction_params(path), UnsupportedError);

  path = write("setting:\n  binWidth: -5\n");
  CHECK_THROWS_AS(load_extraction_params(path), ConfigError);

  CHECK_THROWS_AS(load_extraction_params(temp_file("missing_params.yaml")), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("voxel features match the brute-force oracle") {
  const Eigen::Vector3i dims{14, 13, 12};
  const VolumeGrid vol = pseudo_volume(dims);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity());
  labels.for_each_index([&](int i, int j, int k) {
    const int r2 = (i - 7) * (i - 7) + (j - 6) * (j - 6) + (k - 5) * (k - 5);
    if (r2 <= 20) labels(i, j, k) = 2;
  });
  for (int k = 1; k <= 3; ++k)
    for (int j = 1; j <= 3; ++j)
      for (int i = 1; i <= 3; ++i) labels(i, j, k) = 3;

  ExtractionParams params;
  params.kernel_radius = 2;
  params.bin_width = 25.0;
  params.masked_kernel = true;

  const auto check_against_oracle = [&](const VoxelFeatureMap& fmap, bool masked) {
    for (std::size_t v = 0; v < fmap.size(); ++v) {
      const std::vector<double> nb = oracle_neighborhood(vol, labels, fmap.label,
                                                         fmap.coords[v], fmap.kernel_radius,
                                                         masked);
      const std::map<std::string, double> expect = oracle_features(nb, fmap.bin_width);
      for (const auto& [name, want] : expect) {
        const double got = fmap.features.at(name)[v];
        if (name == "entropy") {
          CHECK(std::abs(got - want) <= 1e-9);
        } else {
          const double tol = 1e-6 * std::max(1.0, std::abs(want));
          CHECK(std::abs(got - want) <= tol);
        }
      }
    }
  };

  SUBCASE("masked kernel, two labels with preset widths") {
    const FeatureMapStack stack =
        extract_voxel_features(vol, labels, params, {2, 3}, {25.0, 40.0});
    REQUIRE(stack.conditions.size() == 2);
    CHECK(stack.conditions[0].label == 2);
    CHECK(stack.conditions[1].bin_width == 40.0);
    for (const auto& fmap : stack.conditions) check_against_oracle(fmap, true);
  }

  SUBCASE("unmasked kernel") {
    params.masked_kernel = false;
    params.kernel_radius = 1;
    const FeatureMapStack stack = extract_voxel_features(vol, labels, params, {3});
    REQUIRE(stack.conditions.size() == 1);
    check_against_oracle(stack.conditions[0], false);
  }
}

TEST_CASE("voxel feature extraction is batch independent") {
  const Eigen::Vector3i dims{12, 11, 10};
  const VolumeGrid vol = pseudo_volume(dims);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity());
  labels.for_each_index([&](int i, int j, int k) {
    if (i >= 2 && i < 9 && j >= 3 && j < 9 && k >= 2 && k < 8) labels(i, j, k) = 1;
  });

  ExtractionParams params;
  params.kernel_radius = 2;

  FeatureMapStack stacks[3];
  const long batches[3] = {1, 7, 10000};
  for (int s = 0; s < 3; ++s) {
    params.voxel_batch = batches[s];
    stacks[s] = extract_voxel_features(vol, labels, params, {1});
  }
  for (int s = 1; s < 3; ++s) {
    REQUIRE(stacks[s].conditions.size() == 1);
    CHECK(stacks[s].conditions[0].coords == stacks[0].conditions[0].coords);
    for (const auto& [name, column] : stacks[0].conditions[0].features)
      CHECK(stacks[s].conditions[0].features.at(name) == column);
  }
}

TEST_CASE("constant VOI degenerates cleanly") {
  const Eigen::Vector3i dims{9, 9, 9};
  VolumeGrid vol(dims, Eigen::Matrix4d::Identity(), 120.0f);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity());
  for (int k = 2; k < 7; ++k)
    for (int j = 2; j < 7; ++j)
      for (int i = 2; i < 7; ++i) labels(i, j, k) = 1;

  const FeatureMapStack stack = extract_voxel_features(vol, labels, ExtractionParams{}, {1});
  const VoxelFeatureMap& fmap = stack.conditions[0];
  for (std::size_t v = 0; v < fmap.size(); ++v) {
    CHECK(fmap.features.at("entropy")[v] == 0.0);
    CHECK(fmap.features.at("variance")[v] == 0.0);
    CHECK(fmap.features.at("uniformity")[v] == 1.0);
    CHECK(fmap.features.at("skewness")[v] == 0.0);
    CHECK(fmap.features.at("kurtosis")[v] == 0.0);
    CHECK(fmap.features.at("mean")[v] == 120.0);
    CHECK(fmap.features.at("range")[v] == 0.0);
    CHECK(fmap.features.at("rmad")[v] == 0.0);
  }
}

TEST_CASE("voxel feature extraction error cases") {
  const Eigen::Vector3i dims{6, 6, 6};
  const VolumeGrid vol = pseudo_volume(dims);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity());
  labels(1, 1, 1) = 1;

  ExtractionParams params;
  CHECK_THROWS_AS(extract_voxel_features(vol, labels, params, {9}), DomainError);
  CHECK_THROWS_AS(extract_voxel_features(vol, labels, params, {}), ConfigError);
  CHECK_THROWS_AS(extract_voxel_features(vol, labels, params, {1}, {25.0, 30.0}), ConfigError);
  CHECK_THROWS_AS(extract_voxel_features(vol, labels, params, {1}, {-2.0}), ConfigError);

  params.bin_width = 0.0;
  CHECK_THROWS_AS(extract_voxel_features(vol, labels, params, {1}), ConfigError);
  params = ExtractionParams{};
  params.kernel_radius = 0;
  CHECK_THROWS_AS(extract_voxel_features(vol, labels, params, {1}), ConfigError);

  // NaN init_value is repaired, not rejected
  params = ExtractionParams{};
  params.init_value = std::numeric_limits<double>::quiet_NaN();
  CHECK_NOTHROW(extract_voxel_features(vol, labels, params, {1}));
}

TEST_CASE("global feature map reconstruction") {
  SUBCASE("bbox with padding ring") {
    const Eigen::Vector3i origin{3, 4, 5};
    const Eigen::Vector3i extent{6, 7, 8};
    const int ks = 2;
    const Eigen::Vector3i full{16, 18, 21};
    Volume<double> cropped(extent + Eigen::Vector3i::Constant(2 * ks),
                           Eigen::Matrix4d::Identity());
    cropped.for_each_index([&](int i, int j, int k) { cropped(i, j, k) = -1.0; });
    for (int k = 0; k < extent.z(); ++k)
      for (int j = 0; j < extent.y(); ++j)
        for (int i = 0; i < extent.x(); ++i)
          cropped(i + ks, j + ks, k + ks) = i + 100.0 * j + 10000.0 * k;

    const Volume<double> out =
        reconstruct_global_feature_map(cropped, origin, extent, ks, full);
    out.for_each_index([&](int i, int j, int k) {
      const bool inside = i >= 3 && i <= 8 && j >= 4 && j <= 10 && k >= 5 && k <= 12;
      if (inside) {
        CHECK(out(i, j, k) == (i - 3) + 100.0 * (j - 4) + 10000.0 * (k - 5));
      } else {
        CHECK(out(i, j, k) == 0.0);
      }
    });
    // the padded ring (-1 values) never leaks into the output
    long nonzero = 0;
    for (const double v : out.raw()) nonzero += v != 0.0;
    CHECK(nonzero == 6 * 7 * 8 - 1);  // minus the zero at the bbox corner
  }

  SUBCASE("ks=0 places the cropped map verbatim") {
    const Eigen::Vector3i full{4, 5, 6};
    Volume<double> cropped(full, Eigen::Matrix4d::Identity());
    cropped.for_each_index([&](int i, int j, int k) { cropped(i, j, k) = i + j + k; });
    const Volume<double> out = reconstruct_global_feature_map(
        cropped, Eigen::Vector3i::Zero(), full, 0, full);
    CHECK(out.raw() == cropped.raw());
  }

  SUBCASE("all-zero cropped map stays all-zero") {
    Volume<double> cropped(Eigen::Vector3i{6, 6, 6}, Eigen::Matrix4d::Identity());
    const Volume<double> out = reconstruct_global_feature_map(
        cropped, Eigen::Vector3i{1, 1, 1}, Eigen::Vector3i{2, 2, 2}, 2,
        Eigen::Vector3i{8, 8, 8});
    CHECK(count_nonzero(out) == 0);
  }

  SUBCASE("shape and bbox violations") {
    Volume<double> cropped(Eigen::Vector3i{5, 5, 5}, Eigen::Matrix4d::Identity());
    CHECK_THROWS_AS(reconstruct_global_feature_map(cropped, {0, 0, 0}, {2, 2, 2}, 2,
                                                   {8, 8, 8}),
                    DomainError);  // expects 6x6x6
    Volume<double> ok(Eigen::Vector3i{6, 6, 6}, Eigen::Matrix4d::Identity());
    CHECK_THROWS_AS(reconstruct_global_feature_map(ok, {7, 0, 0}, {2, 2, 2}, 2, {8, 8, 8}),
                    DomainError);  // bbox leaves volume
  }
}

namespace {

FeatureMapStack synthetic_stack(int n) {
  FeatureMapStack stack;
  std::vector<Eigen::Vector3i> coords;
  for (int v = 0; v < n; ++v) coords.emplace_back(v, 0, 0);

  const auto add = [&](const std::string& name, auto&& fn) {
    VoxelFeatureMap fmap;
    fmap.condition = name;
    fmap.shape = Eigen::Vector3i(n, 1, 1);
    fmap.coords = coords;
    std::vector<double> x(n);
    for (int v = 0; v < n; ++v) x[v] = fn(v);
    fmap.features.emplace("kurtosis", std::move(x));
    stack.conditions.push_back(std::move(fmap));
  };
  add("c1", [](int v) { return 10.0 * std::sin(v) + v; });
  add("c2", [](int v) { return 2.0 * (10.0 * std::sin(v) + v) + 5.0; });  // affine of c1
  add("c3", [](int v) { return 7.0 * std::cos(v) - 0.2 * v; });
  add("c4", [](int v) { return static_cast<double>((v * v) % 13); });
  return stack;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("SAP pooling invariants") {
  const int n = 50;
  const FeatureMapStack stack = synthetic_stack(n);

  SUBCASE("k=1 reproduces the standardized condition") {
    const SapResult r = sap_pool(stack, "kurtosis", {"c1"});
    const std::vector<double> z = zscore(stack.find("c1")->features.at("kurtosis"));
    REQUIRE(r.pooled.size() == static_cast<std::size_t>(n));
    CHECK(max_abs_diff(r.pooled, z) < 1e-9);
  }

  SUBCASE("identical conditions pool to the shared z-score") {
    FeatureMapStack same = synthetic_stack(n);
    same.conditions[1] = same.conditions[0];
    same.conditions[1].condition = "c2";
    same.conditions[2] = same.conditions[0];
    same.conditions[2].condition = "c3";
    const SapResult r = sap_pool(same, "kurtosis", {"c1", "c2", "c3"});
    const std::vector<double> z = zscore(same.conditions[0].features.at("kurtosis"));
    CHECK(max_abs_diff(r.pooled, z) < 1e-9);
  }

  SUBCASE("per-condition affine maps do not change the pool") {
    const SapResult base = sap_pool(stack, "kurtosis", {"c1", "c3", "c4"});

    FeatureMapStack warped = synthetic_stack(n);
    for (double& v : warped.conditions[2].features.at("kurtosis")) v = 1.7 * v - 4.0;
    const SapResult moved = sap_pool(warped, "kurtosis", {"c1", "c3", "c4"});
    CHECK(max_abs_diff(base.pooled, moved.pooled) < 1e-9);

    // c2 is an affine image of c1, so swapping it in changes nothing either
    const SapResult via_c2 = sap_pool(stack, "kurtosis", {"c2", "c3", "c4"});
    CHECK(max_abs_diff(base.pooled, via_c2.pooled) < 1e-9);
  }

  SUBCASE("pooled length equals N for every subset size") {
    const std::vector<std::string> all = {"c1", "c2", "c3", "c4"};
    for (std::size_t k = 1; k <= all.size(); ++k) {
      const std::vector<std::string> subset(all.begin(), all.begin() + k);
      CHECK(sap_pool(stack, "kurtosis", subset).pooled.size() == static_cast<std::size_t>(n));
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(sap_pool(stack, "kurtosis", {"nope"}), DomainError);
    CHECK_THROWS_AS(sap_pool(stack, "energy", {"c1"}), DomainError);
    CHECK_THROWS_AS(sap_pool(stack, "kurtosis", {}), DomainError);

    FeatureMapStack tiny = synthetic_stack(1);
    CHECK_THROWS_AS(sap_pool(tiny, "kurtosis", {"c1"}), DomainError);

    FeatureMapStack flat = synthetic_stack(n);
    for (double& v : flat.conditions[0].features.at("kurtosis")) v = 3.0;
    CHECK_THROWS_AS(sap_pool(flat, "kurtosis", {"c1", "c3"}), DomainError);

    FeatureMapStack shifted = synthetic_stack(n);
    shifted.conditions[3].coords[0] = Eigen::Vector3i(99, 0, 0);
    CHECK_THROWS_AS(sap_pool(shifted, "kurtosis", {"c1", "c4"}), DomainError);
  }
}

TEST_CASE("CSV export is deterministic and complete") {
  const Eigen::Vector3i dims{6, 5, 4};
  const VolumeGrid vol = pseudo_volume(dims);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity());
  for (int i = 1; i < 4; ++i) labels(i, 2, 2) = 1;

  ExtractionParams params;
  params.kernel_radius = 1;
  const FeatureMapStack stack = extract_voxel_features(vol, labels, params, {1});

  const std::string p1 = temp_file("aarchive_feats_1.csv");
  const std::string p2 = temp_file("aarchive_feats_2.csv");
  export_features_csv(stack, p1);
  export_features_csv(stack, p2);

  const auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string text = slurp(p1);
  CHECK(text == slurp(p2));

  std::istringstream lines(text);
  std::string header;
  std::getline(lines, header);
  CHECK(header.rfind("x,y,z,energy,", 0) == 0);
  CHECK(header.find(",condition") != std::string::npos);
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);) ++rows;
  CHECK(rows == stack.conditions[0].size());

  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
