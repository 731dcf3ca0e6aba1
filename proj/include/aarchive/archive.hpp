#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aarchive/registry.hpp"
#include "aarchive/volume.hpp"

namespace aarchive {

/// COO-encoded binary VOI, optionally carrying the HU values at its voxels.
/// Coordinates are (x, y, z) rows in lexicographic order.
struct SparseMask {
  Eigen::Vector3i shape{0, 0, 0};
  std::vector<std::array<std::uint32_t, 3>> coords;
  std::vector<std::int16_t> values;          ///< HU at coords; paired with fill_value
  std::optional<std::int16_t> fill_value;    ///< min HU of the source volume

  std::size_t count() const { return coords.size(); }
  bool has_values() const { return fill_value.has_value(); }
  std::size_t dense_size() const {
    return static_cast<std::size_t>(shape.x()) * shape.y() * shape.z();
  }

  bool operator==(const SparseMask&) const = default;
};

/// Archive metadata. `dense_masks` records which masks crossed the COO
/// economy threshold and were stored as bitmaps instead.
struct ArchiveMeta {
  std::string data_id;
  std::string class_map;
  int class_map_version = 0;
  bool bed_removed = false;
  std::vector<std::string> dense_masks;

  bool operator==(const ArchiveMeta&) const = default;
};

/// One packed dataset: every anatomy mask of a label volume, the anatomy
/// graph they attach to, and optionally the original image.
struct ArchiveRecord {
  Eigen::Vector3i shape{0, 0, 0};
  std::map<std::string, SparseMask> masks;
  AnatomyGraph graph;
  std::optional<VolumeGrid> image;
  ArchiveMeta meta;
};

/// COO-encode a binary mask. When `gray` is given, HU values at the mask
/// voxels are stored along with the global minimum HU as fill value.
SparseMask encode_sparse_mask(const MaskVolume& mask, const VolumeGrid* gray = nullptr);

/// Exact inverse of encode for the binary component.
MaskVolume decode_sparse_mask(const SparseMask& m);

/// Dense HU volume: fill_value everywhere except the mask voxels.
VolumeGrid restore_hu_volume(const SparseMask& m);

/// Build a record holding one mask per class-map label present in `labels`.
/// Masks are keyed by anatomy name, so a consistent permutation of label
/// integers leaves the record unchanged.
ArchiveRecord make_archive_record(const Volume<std::int32_t>& labels, const ClassMap& class_map,
                                  const AnatomyGraph& graph, const VolumeGrid* gray,
                                  bool store_image, const std::string& data_id,
                                  int class_map_version, bool bed_removed = false);

/// Serialize to / from the .aarc container (MessagePack).
void pack_archive(const ArchiveRecord& rec, const std::string& path);
ArchiveRecord unpack_archive(const std::string& path);

/// Packed container bytes (what pack_archive writes).
std::vector<std::uint8_t> pack_archive_bytes(const ArchiveRecord& rec);

/// Masks for every leaf the selector expands to (through the record's own
/// graph, after registry synonym normalization). Throws DomainError when the
/// selection matches no stored mask.
std::map<std::string, SparseMask> query_masks(const ArchiveRecord& rec,
                                              const std::string& selector,
                                              const Registry& registry = Registry::builtin());

}  // namespace aarchive
