#include "aarchive/archive.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "aarchive/errors.hpp"

namespace aarchive {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "archive blobs assume a little-endian host");

std::int16_t to_hu(float v) {
  const long r = std::lround(v);
  if (r < -32768 || r > 32767)
    throw DomainError("HU value " + std::to_string(v) + " does not fit 16 bits");
  return static_cast<std::int16_t>(r);
}

json::binary_t coords_blob(const std::vector<std::array<std::uint32_t, 3>>& coords) {
  json::binary_t blob(std::vector<std::uint8_t>(coords.size() * 12));
  std::memcpy(blob.data(), coords.data(), blob.size());
  return blob;
}

json::binary_t values_blob(const std::vector<std::int16_t>& values) {
  json::binary_t blob(std::vector<std::uint8_t>(values.size() * 2));
  std::memcpy(blob.data(), values.data(), blob.size());
  return blob;
}

json::binary_t bitmap_blob(const SparseMask& m) {
  json::binary_t blob(std::vector<std::uint8_t>((m.dense_size() + 7) / 8, 0));
  for (const auto& c : m.coords) {
    const std::size_t idx = c[0] + static_cast<std::size_t>(m.shape.x()) *
                                        (c[1] + static_cast<std::size_t>(m.shape.y()) * c[2]);
    blob[idx / 8] |= static_cast<std::uint8_t>(1u << (idx % 8));
  }
  return blob;
}

// COO stops paying off at one third density.
bool wants_dense(const SparseMask& m) { return 3 * m.count() >= m.dense_size(); }

json mask_to_json(const SparseMask& m, bool dense) {
  json j;
  j["count"] = m.count();
  if (dense)
    j["bitmap"] = bitmap_blob(m);
  else
    j["coords"] = coords_blob(m.coords);
  if (m.has_values()) {
    j["values"] = values_blob(m.values);
    j["fill_value"] = *m.fill_value;
  }
  return j;
}

SparseMask mask_from_json(const json& j, const Eigen::Vector3i& shape) {
  SparseMask m;
  m.shape = shape;
  const auto count = j.at("count").get<std::size_t>();

  if (j.contains("coords")) {
    const auto& blob = j.at("coords").get_binary();
    if (blob.size() != count * 12) throw FormatError("coords blob size mismatch");
    m.coords.resize(count);
    std::memcpy(m.coords.data(), blob.data(), blob.size());
  } else if (j.contains("bitmap")) {
    const auto& blob = j.at("bitmap").get_binary();
    const std::size_t total = static_cast<std::size_t>(shape.x()) * shape.y() * shape.z();
    if (blob.size() != (total + 7) / 8) throw FormatError("bitmap blob size mismatch");
    m.coords.reserve(count);
    // Lexicographic (x, y, z) order: x outermost.
    for (std::uint32_t x = 0; x < static_cast<std::uint32_t>(shape.x()); ++x)
      for (std::uint32_t y = 0; y < static_cast<std::uint32_t>(shape.y()); ++y)
        for (std::uint32_t z = 0; z < static_cast<std::uint32_t>(shape.z()); ++z) {
          const std::size_t idx = x + static_cast<std::size_t>(shape.x()) *
                                          (y + static_cast<std::size_t>(shape.y()) * z);
          if (blob[idx / 8] & (1u << (idx % 8))) m.coords.push_back({x, y, z});
        }
    if (m.coords.size() != count) throw FormatError("bitmap population mismatch");
  } else {
    throw FormatError("mask entry lacks both coords and bitmap");
  }

  if (j.contains("values") != j.contains("fill_value"))
    throw FormatError("values and fill_value must appear together");
  if (j.contains("values")) {
    const auto& blob = j.at("values").get_binary();
    if (blob.size() != count * 2) throw FormatError("values blob size mismatch");
    m.values.resize(count);
    std::memcpy(m.values.data(), blob.data(), blob.size());
    m.fill_value = j.at("fill_value").get<std::int16_t>();
  }

  for (const auto& c : m.coords)
    if (c[0] >= static_cast<std::uint32_t>(shape.x()) ||
        c[1] >= static_cast<std::uint32_t>(shape.y()) ||
        c[2] >= static_cast<std::uint32_t>(shape.z()))
      throw FormatError("mask coordinate outside the archive shape");
  return m;
}

}  // namespace

SparseMask encode_sparse_mask(const MaskVolume& mask, const VolumeGrid* gray) {
  if (gray && gray->dims() != mask.dims())
    throw DomainError("gray volume shape does not match the mask");

  SparseMask m;
  m.shape = mask.dims();
  // Lexicographic (x, y, z): x outermost loop.
  for (int x = 0; x < mask.dims().x(); ++x)
    for (int y = 0; y < mask.dims().y(); ++y)
      for (int z = 0; z < mask.dims().z(); ++z)
        if (mask(x, y, z) != 0)
          m.coords.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                              static_cast<std::uint32_t>(z)});

  if (gray) {
    float lo = std::numeric_limits<float>::infinity();
    for (const float v : gray->raw()) lo = std::min(lo, v);
    if (gray->empty()) lo = 0.0f;
    m.fill_value = to_hu(lo);
    m.values.reserve(m.coords.size());
    for (const auto& c : m.coords)
      m.values.push_back(to_hu((*gray)(static_cast<int>(c[0]), static_cast<int>(c[1]),
                                       static_cast<int>(c[2]))));
  }
  return m;
}

MaskVolume decode_sparse_mask(const SparseMask& m) {
  MaskVolume out(m.shape, Eigen::Matrix4d::Identity(), 0);
  for (const auto& c : m.coords) {
    if (!out.contains(static_cast<int>(c[0]), static_cast<int>(c[1]), static_cast<int>(c[2])))
      throw DomainError("mask coordinate outside its shape");
    out(static_cast<int>(c[0]), static_cast<int>(c[1]), static_cast<int>(c[2])) = 1;
  }
  return out;
}

VolumeGrid restore_hu_volume(const SparseMask& m) {
  if (!m.has_values()) throw DomainError("sparse mask carries no HU values to restore");
  if (m.values.size() != m.coords.size())
    throw DomainError("sparse mask values/coords length mismatch");
  VolumeGrid out(m.shape, Eigen::Matrix4d::Identity(), static_cast<float>(*m.fill_value));
  for (std::size_t i = 0; i < m.coords.size(); ++i) {
    const auto& c = m.coords[i];
    out.at(static_cast<int>(c[0]), static_cast<int>(c[1]), static_cast<int>(c[2])) =
        static_cast<float>(m.values[i]);
  }
  return out;
}

ArchiveRecord make_archive_record(const Volume<std::int32_t>& labels, const ClassMap& class_map,
                                  const AnatomyGraph& graph, const VolumeGrid* gray,
                                  bool store_image, const std::string& data_id,
                                  int class_map_version, bool bed_removed) {
  if (gray && gray->dims() != labels.dims())
    throw DomainError("gray volume shape does not match the label volume");
  if (store_image && !gray) throw DomainError("cannot store an image that was not provided");

  ArchiveRecord rec;
  rec.shape = labels.dims();
  rec.graph = graph;
  rec.meta.data_id = data_id;
  rec.meta.class_map = class_map.task_name;
  rec.meta.class_map_version = class_map_version;
  rec.meta.bed_removed = bed_removed;

  std::set<std::int32_t> present(labels.raw().begin(), labels.raw().end());
  for (const std::int32_t label : present) {
    if (label == 0) continue;
    const auto it = class_map.entries.find(label);
    if (it == class_map.entries.end())
      throw DomainError("label " + std::to_string(label) + " is not in class map '" +
                        class_map.task_name + "'");
    if (!graph.is_leaf(it->second))
      throw DomainError("anatomy '" + it->second + "' is not a leaf of the graph");
    rec.masks[it->second] = encode_sparse_mask(mask_of_label(labels, label), gray);
  }
  if (store_image) rec.image = *gray;
  return rec;
}

std::vector<std::uint8_t> pack_archive_bytes(const ArchiveRecord& rec) {
  for (const auto& [name, m] : rec.masks) {
    if (m.shape != rec.shape)
      throw DomainError("mask '" + name + "' shape differs from the record shape");
    if (!rec.graph.is_leaf(name))
      throw DomainError("mask '" + name + "' is not a leaf of the record graph");
    if (m.values.size() != (m.has_values() ? m.coords.size() : 0))
      throw DomainError("mask '" + name + "' has inconsistent values");
  }

  json root;
  root["schema_version"] = 1;
  root["shape"] = {rec.shape.x(), rec.shape.y(), rec.shape.z()};
  root["graph"] = rec.graph.to_json();

  json masks = json::object();
  std::vector<std::string> dense_names;
  for (const auto& [name, m] : rec.masks) {
    const bool dense = wants_dense(m);
    if (dense) dense_names.push_back(name);
    masks[name] = mask_to_json(m, dense);
  }
  root["masks"] = masks;

  if (rec.image) {
    json::binary_t data(std::vector<std::uint8_t>(rec.image->raw().size() * 4));
    std::memcpy(data.data(), rec.image->raw().data(), data.size());
    std::array<double, 16> aff;
    Eigen::Map<Eigen::Matrix4d>(aff.data()) = rec.image->affine();
    json::binary_t affine(std::vector<std::uint8_t>(sizeof(aff)));
    std::memcpy(affine.data(), aff.data(), affine.size());
    root["image"] = json{{"data", data}, {"affine", affine}};
  }

  json meta;
  meta["data_id"] = rec.meta.data_id;
  meta["class_map"] = rec.meta.class_map;
  meta["class_map_version"] = rec.meta.class_map_version;
  meta["bed_removed"] = rec.meta.bed_removed;
  meta["dense_masks"] = dense_names;
  root["meta"] = meta;

  return json::to_msgpack(root);
}

void pack_archive(const ArchiveRecord& rec, const std::string& path) {
  const auto bytes = pack_archive_bytes(rec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw IoError("write failed for '" + path + "'");
}

ArchiveRecord unpack_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw IoError("cannot open '" + path + "' for reading");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};

  json root;
  try {
    root = json::from_msgpack(bytes);
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "' is not a valid archive: " + e.what());
  }

  try {
    const int version = root.at("schema_version").get<int>();
    if (version != 1)
      throw FormatError("archive schema version " + std::to_string(version) +
                        " is not supported");

    ArchiveRecord rec;
    const auto shape = root.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("archive shape must have three extents");
    rec.shape = Eigen::Vector3i(shape[0], shape[1], shape[2]);
    rec.graph = AnatomyGraph::from_json(root.at("graph"));

    for (const auto& [name, j] : root.at("masks").items())
      rec.masks[name] = mask_from_json(j, rec.shape);

    if (root.contains("image")) {
      const auto& data = root.at("image").at("data").get_binary();
      const auto& affine = root.at("image").at("affine").get_binary();
      if (affine.size() != 16 * sizeof(double)) throw FormatError("bad image affine blob");
      std::array<double, 16> aff;
      std::memcpy(aff.data(), affine.data(), affine.size());
      VolumeGrid img(rec.shape, Eigen::Map<Eigen::Matrix4d>(aff.data()));
      if (data.size() != img.raw().size() * 4) throw FormatError("bad image data blob");
      std::memcpy(img.raw().data(), data.data(), data.size());
      rec.image = std::move(img);
    }

    const json& meta = root.at("meta");
    rec.meta.data_id = meta.at("data_id").get<std::string>();
    rec.meta.class_map = meta.at("class_map").get<std::string>();
    rec.meta.class_map_version = meta.at("class_map_version").get<int>();
    rec.meta.bed_removed = meta.at("bed_removed").get<bool>();
    rec.meta.dense_masks = meta.at("dense_masks").get<std::vector<std::string>>();
    return rec;
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "' has a malformed archive layout: " + e.what());
  }
}

std::map<std::string, SparseMask> query_masks(const ArchiveRecord& rec,
                                              const std::string& selector,
                                              const Registry& registry) {
  const std::string name = registry.normalize_anatomy_name(selector);
  const auto leaves = rec.graph.expand_selection(name);

  std::map<std::string, SparseMask> out;
  for (const auto& leaf : leaves) {
    const auto it = rec.masks.find(leaf);
    if (it != rec.masks.end()) out[leaf] = it->second;
  }
  if (out.empty())
    throw DomainError("selection '" + selector + "' matches no mask stored in the archive");
  return out;
}

}  // namespace aarchive
