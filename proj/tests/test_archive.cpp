#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "aarchive/archive.hpp"
#include "aarchive/errors.hpp"
#include "aarchive/registry.hpp"

using namespace aarchive;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("aarchive_arc_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

MaskVolume random_mask(const Eigen::Vector3i& dims, double density, unsigned seed) {
  MaskVolume m(dims, Eigen::Matrix4d::Identity(), 0);
  std::mt19937 rng(seed);
  std::bernoulli_distribution d(density);
  for (auto& v : m.raw()) v = d(rng) ? 1 : 0;
  return m;
}

bool same_binary(const MaskVolume& a, const MaskVolume& b) {
  if (a.dims() != b.dims()) return false;
  for (std::size_t i = 0; i < a.raw().size(); ++i)
    if ((a.raw()[i] != 0) != (b.raw()[i] != 0)) return false;
  return true;
}

// Tiny five-leaf graph for container tests that do not need the full registry.
AnatomyGraph tiny_graph() {
  const nlohmann::json hierarchy = nlohmann::json::parse(R"({
    "root": {
      "pair": ["alpha_left", "alpha_right"],
      "solo": ["beta", "gamma", "delta"]
    }
  })");
  return build_anatomy_graph(hierarchy, {{"westside", {"alpha_left", "beta"}},
                                         {"everything", {"root"}}});
}

ArchiveRecord sample_record(bool with_image, unsigned seed = 5) {
  const Eigen::Vector3i dims(9, 8, 7);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity(), 0);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> lab(0, 5);
  for (auto& v : labels.raw()) v = lab(rng);

  VolumeGrid gray(dims, Eigen::Matrix4d::Identity());
  std::uniform_int_distribution<int> hu(-1024, 2500);
  for (auto& v : gray.raw()) v = static_cast<float>(hu(rng));

  ClassMap cm;
  cm.task_name = "tiny";
  cm.entries = {{1, "alpha_left"}, {2, "alpha_right"}, {3, "beta"}, {4, "gamma"}, {5, "delta"}};

  return make_archive_record(labels, cm, tiny_graph(), &gray, with_image, "case-001", 2);
}

}  // namespace

TEST_CASE("sparse mask encode/decode round trip") {
  const Eigen::Vector3i dims(32, 32, 32);
  for (const double density : {0.0, 0.02, 0.4, 1.0}) {
    const MaskVolume m = random_mask(dims, density, 17 + static_cast<unsigned>(density * 100));
    const SparseMask s = encode_sparse_mask(m);
    CHECK(s.count() == count_nonzero(m));
    CHECK(same_binary(decode_sparse_mask(s), m));
  }

  const MaskVolume none(Eigen::Vector3i(4, 4, 4), Eigen::Matrix4d::Identity(), 0);
  CHECK(encode_sparse_mask(none).count() == 0);

  MaskVolume full(Eigen::Vector3i(2, 2, 2), Eigen::Matrix4d::Identity(), 1);
  CHECK(encode_sparse_mask(full).count() == 8);

  MaskVolume single(Eigen::Vector3i(4, 4, 4), Eigen::Matrix4d::Identity(), 0);
  single(1, 2, 3) = 1;
  const MaskVolume back = decode_sparse_mask(encode_sparse_mask(single));
  CHECK(count_nonzero(back) == 1);
  CHECK(back(1, 2, 3) == 1);
}

TEST_CASE("coords are unique, in range, and lexicographically sorted") {
  const MaskVolume m = random_mask({10, 11, 12}, 0.3, 3);
  const SparseMask s = encode_sparse_mask(m);
  CHECK(std::is_sorted(s.coords.begin(), s.coords.end()));
  CHECK(std::adjacent_find(s.coords.begin(), s.coords.end()) == s.coords.end());
  for (const auto& c : s.coords) {
    CHECK(c[0] < 10u);
    CHECK(c[1] < 11u);
    CHECK(c[2] < 12u);
  }
}

TEST_CASE("HU restoration scatters values over the fill") {
  VolumeGrid gray({4, 4, 4}, Eigen::Matrix4d::Identity(), -1024.0f);
  gray(1, 1, 1) = 100.0f;
  gray(2, 2, 2) = 105.0f;

  MaskVolume liver({4, 4, 4}, Eigen::Matrix4d::Identity(), 0);
  liver(1, 1, 1) = 1;
  liver(2, 2, 2) = 1;

  const SparseMask s = encode_sparse_mask(liver, &gray);
  REQUIRE(s.has_values());
  CHECK(*s.fill_value == -1024);

  const VolumeGrid restored = restore_hu_volume(s);
  int non_fill = 0;
  restored.for_each_index([&](int i, int j, int k) {
    if (restored(i, j, k) != -1024.0f) ++non_fill;
  });
  CHECK(non_fill == 2);
  CHECK(restored(1, 1, 1) == 100.0f);
  CHECK(restored(2, 2, 2) == 105.0f);

  // Restore then re-encode of the same voxel set gives the identical mask.
  const SparseMask again = encode_sparse_mask(liver, &restored);
  CHECK(again == s);

  const SparseMask bare = encode_sparse_mask(liver);
  CHECK_THROWS_AS(restore_hu_volume(bare), DomainError);

  MaskVolume empty({3, 3, 3}, Eigen::Matrix4d::Identity(), 0);
  VolumeGrid g2({3, 3, 3}, Eigen::Matrix4d::Identity(), 7.0f);
  const VolumeGrid flat = restore_hu_volume(encode_sparse_mask(empty, &g2));
  for (const float v : flat.raw()) CHECK(v == 7.0f);
}

TEST_CASE("archive container round trip without image") {
  TempDir tmp;
  const ArchiveRecord rec = sample_record(false);
  REQUIRE(rec.masks.size() == 5);
  pack_archive(rec, tmp.file("a.aarc"));

  const ArchiveRecord back = unpack_archive(tmp.file("a.aarc"));
  CHECK(back.shape == rec.shape);
  CHECK(back.masks == rec.masks);
  CHECK_FALSE(back.image.has_value());
  CHECK(back.meta.data_id == "case-001");
  CHECK(back.meta.class_map == "tiny");
  CHECK(back.meta.class_map_version == 2);
  CHECK_FALSE(back.meta.bed_removed);
  CHECK(back.graph.expand_selection("westside") == rec.graph.expand_selection("westside"));
}

TEST_CASE("archive container round trip with image payload") {
  TempDir tmp;
  const ArchiveRecord rec = sample_record(true);
  REQUIRE(rec.image.has_value());
  pack_archive(rec, tmp.file("b.aarc"));

  const ArchiveRecord back = unpack_archive(tmp.file("b.aarc"));
  REQUIRE(back.image.has_value());
  CHECK(back.image->raw() == rec.image->raw());
  CHECK(back.image->affine() == rec.image->affine());
}

TEST_CASE("packing is byte deterministic and empty records are valid") {
  TempDir tmp;
  const ArchiveRecord rec = sample_record(true);
  CHECK(pack_archive_bytes(rec) == pack_archive_bytes(rec));

  ArchiveRecord empty;
  empty.shape = {3, 3, 3};
  empty.graph = tiny_graph();
  empty.meta.data_id = "empty";
  empty.meta.class_map = "tiny";
  empty.meta.class_map_version = 1;
  pack_archive(empty, tmp.file("e.aarc"));
  const ArchiveRecord back = unpack_archive(tmp.file("e.aarc"));
  CHECK(back.masks.empty());
  CHECK(back.shape == Eigen::Vector3i(3, 3, 3));
}

TEST_CASE("dense masks fall back to bitmaps and round trip") {
  TempDir tmp;
  const Eigen::Vector3i dims(12, 10, 8);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity(), 0);
  // beta covers well over a third of the volume; gamma stays sparse.
  labels.for_each_index([&](int i, int j, int k) {
    if (k < 5) labels(i, j, k) = 3;
  });
  labels(0, 0, 7) = 4;

  ClassMap cm;
  cm.task_name = "tiny";
  cm.entries = {{3, "beta"}, {4, "gamma"}};
  const ArchiveRecord rec =
      make_archive_record(labels, cm, tiny_graph(), nullptr, false, "dense", 2);

  pack_archive(rec, tmp.file("d.aarc"));
  const ArchiveRecord back = unpack_archive(tmp.file("d.aarc"));
  CHECK(back.meta.dense_masks == std::vector<std::string>{"beta"});
  CHECK(back.masks == rec.masks);
  CHECK(same_binary(decode_sparse_mask(back.masks.at("beta")),
                    mask_of_label(labels, 3)));
}

TEST_CASE("label permutation does not change the packed archive") {
  const Eigen::Vector3i dims(8, 8, 8);
  Volume<std::int32_t> a(dims, Eigen::Matrix4d::Identity(), 0);
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> lab(0, 3);
  for (auto& v : a.raw()) v = lab(rng);

  // Permutation pi: 1->3, 2->1, 3->2.
  Volume<std::int32_t> b(dims, Eigen::Matrix4d::Identity(), 0);
  const int pi[4] = {0, 3, 1, 2};
  for (std::size_t i = 0; i < a.raw().size(); ++i) b.raw()[i] = pi[a.raw()[i]];

  ClassMap ca, cb;
  ca.task_name = cb.task_name = "tiny";
  ca.entries = {{1, "beta"}, {2, "gamma"}, {3, "delta"}};
  cb.entries = {{3, "beta"}, {1, "gamma"}, {2, "delta"}};

  const auto bytes_a =
      pack_archive_bytes(make_archive_record(a, ca, tiny_graph(), nullptr, false, "perm", 2));
  const auto bytes_b =
      pack_archive_bytes(make_archive_record(b, cb, tiny_graph(), nullptr, false, "perm", 2));
  CHECK(bytes_a == bytes_b);
}

TEST_CASE("query masks by leaf, stem, structure, and group") {
  const ArchiveRecord rec = sample_record(false);

  const auto one = query_masks(rec, "alpha_left");
  CHECK(one.size() == 1);
  CHECK(one.count("alpha_left") == 1);

  const auto pair = query_masks(rec, "alpha");
  CHECK(pair.size() == 2);

  const auto solo = query_masks(rec, "solo");
  CHECK(solo.size() == 3);

  const auto west = query_masks(rec, "westside");
  CHECK(west.size() == 2);
  CHECK(west.count("alpha_left") == 1);
  CHECK(west.count("beta") == 1);

  CHECK_THROWS_AS(query_masks(rec, "no_such_thing"), DomainError);
}

TEST_CASE("group query equals the union of member queries") {
  const ArchiveRecord rec = sample_record(false);
  // Brute force on the 5-leaf graph: decode of every group query equals the
  // voxelwise OR of its members' leaf decodes.
  const auto whole = query_masks(rec, "everything");
  CHECK(whole.size() == rec.masks.size());

  MaskVolume acc(rec.shape, Eigen::Matrix4d::Identity(), 0);
  for (const auto& [name, mask] : query_masks(rec, "westside")) {
    const MaskVolume d = decode_sparse_mask(mask);
    for (std::size_t i = 0; i < acc.raw().size(); ++i)
      acc.raw()[i] = acc.raw()[i] || d.raw()[i];
  }
  MaskVolume expect(rec.shape, Eigen::Matrix4d::Identity(), 0);
  for (const char* leaf : {"alpha_left", "beta"}) {
    const MaskVolume d = decode_sparse_mask(rec.masks.at(leaf));
    for (std::size_t i = 0; i < expect.raw().size(); ++i)
      expect.raw()[i] = expect.raw()[i] || d.raw()[i];
  }
  CHECK(same_binary(acc, expect));
}

TEST_CASE("registry synonyms apply to archive queries") {
  // Build a record over real anatomy names so the builtin registry resolves.
  const Eigen::Vector3i dims(6, 6, 6);
  Volume<std::int32_t> labels(dims, Eigen::Matrix4d::Identity(), 0);
  labels(1, 1, 1) = 77;
  labels(2, 2, 2) = 78;
  const Registry& reg = Registry::builtin();
  const ArchiveRecord rec = make_archive_record(labels, reg.load_class_map("total", 2),
                                                reg.graph(), nullptr, false, "syn", 2);
  const auto hips = query_masks(rec, "pelvic");
  CHECK(hips.size() == 2);
  CHECK(hips.count("hip_left") == 1);
  CHECK(hips.count("hip_right") == 1);
}

TEST_CASE("corrupt containers are rejected") {
  TempDir tmp;
  std::ofstream(tmp.file("junk.aarc"), std::ios::binary).write("notmsgpack", 10);
  CHECK_THROWS_AS(unpack_archive(tmp.file("junk.aarc")), FormatError);

  // Valid msgpack, wrong schema version.
  const auto bytes = nlohmann::json::to_msgpack(nlohmann::json{{"schema_version", 99}});
  std::ofstream(tmp.file("v99.aarc"), std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(unpack_archive(tmp.file("v99.aarc")), FormatError);

  CHECK_THROWS_AS(unpack_archive(tmp.file("absent.aarc")), IoError);
}

TEST_CASE("COO economy bound decides the storage form") {
  TempDir tmp;
  const ArchiveRecord rec = sample_record(false);
  pack_archive(rec, tmp.file("econ.aarc"));
  const ArchiveRecord back = unpack_archive(tmp.file("econ.aarc"));
  for (const auto& [name, m] : back.masks) {
    const bool dense = std::find(back.meta.dense_masks.begin(), back.meta.dense_masks.end(),
                                 name) != back.meta.dense_masks.end();
    if (dense)
      CHECK(3 * m.count() >= m.dense_size());
    else
      CHECK(3 * m.count() < m.dense_size());
  }
}
