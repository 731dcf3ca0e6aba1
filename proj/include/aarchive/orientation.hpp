#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

#include "aarchive/volume.hpp"

namespace aarchive {

/// Anatomical direction codes, one per data axis. Each code names the world
/// direction the axis points toward at its high end: L/R, P/A, I/S.
struct AxCodes {
  std::array<char, 3> codes;

  bool operator==(const AxCodes&) const = default;
  std::string str() const { return std::string(codes.begin(), codes.end()); }

  /// Parse "PLS", "RAS", ... (a trailing '+' is tolerated and ignored).
  static AxCodes parse(const std::string& s);
  /// Throws DomainError unless exactly one of {L,R}, {P,A}, {I,S} is present.
  void validate() const;

  static AxCodes pls() { return AxCodes{{'P', 'L', 'S'}}; }
  static AxCodes ras() { return AxCodes{{'R', 'A', 'S'}}; }
};

/// One row of an orientation table: which output axis an input axis maps to,
/// and with which sign.
struct OrientationEntry {
  int axis = 0;
  int flip = 1;

  bool operator==(const OrientationEntry&) const = default;
};

using Orientation = std::array<OrientationEntry, 3>;

/// Closest axis-aligned orientation of an affine: for each input axis, the
/// world axis of maximal |direction cosine| and its sign. Assignment is
/// greedy by magnitude so the result is always a permutation.
/// Throws DomainError for a singular 3x3 block.
Orientation io_orientation(const Eigen::Matrix4d& affine);

AxCodes orientation_to_axcodes(const Orientation& ornt);
Orientation axcodes_to_orientation(const AxCodes& codes);

/// Orientation taking data laid out as `start` to data laid out as `end`.
Orientation orientation_transform(const Orientation& start, const Orientation& end);

/// Affine mapping indices of the transformed array back to indices of the
/// original array of dimensions `dims`; right-multiplying the original affine
/// by this keeps the world position of every voxel unchanged.
Eigen::Matrix4d inverse_orientation_affine(const Orientation& ornt, const Eigen::Vector3i& dims);

/// Anatomical codes of a volume affine (identity -> RAS).
AxCodes orientation_from_affine(const Eigen::Matrix4d& affine);

/// Permute + flip voxel data according to `ornt` and update the affine so
/// every voxel keeps its world position. No interpolation ever happens.
template <typename Scalar>
Volume<Scalar> apply_orientation(const Volume<Scalar>& vol, const Orientation& ornt) {
  const Eigen::Vector3i od = vol.dims();
  Eigen::Vector3i nd;
  for (int i = 0; i < 3; ++i) nd[ornt[i].axis] = od[i];

  Volume<Scalar> out(nd, vol.affine() * inverse_orientation_affine(ornt, od));

  Eigen::Vector3i u;  // new index
  for (int k = 0; k < od.z(); ++k)
    for (int j = 0; j < od.y(); ++j)
      for (int i = 0; i < od.x(); ++i) {
        const Eigen::Vector3i v(i, j, k);
        for (int a = 0; a < 3; ++a)
          u[ornt[a].axis] = ornt[a].flip > 0 ? v[a] : od[a] - 1 - v[a];
        out(u.x(), u.y(), u.z()) = vol(i, j, k);
      }
  return out;
}

/// Reorient a volume to the target axis codes. Returns the input unchanged
/// (same data, same affine) when it is already at the target.
template <typename Scalar>
Volume<Scalar> reorient_volume(const Volume<Scalar>& vol, const AxCodes& target) {
  target.validate();
  const Orientation current = io_orientation(vol.affine());
  if (orientation_to_axcodes(current) == target) return vol;
  const Orientation t = orientation_transform(current, axcodes_to_orientation(target));
  return apply_orientation(vol, t);
}

}  // namespace aarchive
