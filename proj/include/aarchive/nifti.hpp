#pragma once

#include <cstdint>
#include <string>

#include "aarchive/volume.hpp"

namespace aarchive::nifti {

/// Read a NIfTI-1 volume (.nii or .nii.gz), applying any scale slope and
/// intercept, into a float grid. The affine prefers the sform over the qform.
VolumeGrid read_volume(const std::string& path);

/// Read a label map without intensity rescaling. A non-trivial scale slope in
/// a label file is refused rather than silently applied.
Volume<std::int32_t> read_labels(const std::string& path);

/// Write a volume as NIfTI-1, little-endian, gzip-compressed when the path
/// ends in .gz. The on-disk datatype follows the element type.
void write_volume(const VolumeGrid& vol, const std::string& path);
void write_volume(const Volume<std::int16_t>& vol, const std::string& path);
void write_volume(const Volume<std::int32_t>& vol, const std::string& path);
void write_volume(const Volume<std::uint8_t>& vol, const std::string& path);

}  // namespace aarchive::nifti
