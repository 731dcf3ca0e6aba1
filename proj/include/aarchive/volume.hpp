#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aarchive/errors.hpp"

namespace aarchive {

/// Dense 3D scalar field with a voxel-to-world affine.
///
/// Storage is x-fastest (first axis contiguous), matching the on-disk layout
/// of NIfTI volumes so IO is a flat copy. Voxel spacing is not stored: it is
/// the column norm of the affine by definition, so the two can never drift
/// apart.
template <typename Scalar>
class Volume {
public:
  Volume() : dims_(0, 0, 0), affine_(Eigen::Matrix4d::Identity()) {}

  Volume(const Eigen::Vector3i& dims, const Eigen::Matrix4d& affine, Scalar fill = Scalar(0))
      : dims_(dims), affine_(affine),
        data_(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z(), fill) {
    if ((dims.array() < 0).any())
      throw DomainError("volume dimensions must be non-negative");
  }

  static Volume with_identity_affine(const Eigen::Vector3i& dims, Scalar fill = Scalar(0)) {
    return Volume(dims, Eigen::Matrix4d::Identity(), fill);
  }

  const Eigen::Vector3i& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  const Eigen::Matrix4d& affine() const { return affine_; }
  void set_affine(const Eigen::Matrix4d& a) { affine_ = a; }

  /// Voxel spacing in mm: Euclidean norm of each affine column.
  Eigen::Vector3d spacing() const {
    return Eigen::Vector3d(affine_.block<3, 1>(0, 0).norm(),
                           affine_.block<3, 1>(0, 1).norm(),
                           affine_.block<3, 1>(0, 2).norm());
  }

  /// Volume of one voxel in mm^3.
  double voxel_volume_mm3() const { return spacing().prod(); }

  std::size_t linear_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.y()) * k);
  }

  Scalar& operator()(int i, int j, int k) { return data_[linear_index(i, j, k)]; }
  Scalar operator()(int i, int j, int k) const { return data_[linear_index(i, j, k)]; }

  Scalar& at(int i, int j, int k) {
    check_bounds(i, j, k);
    return data_[linear_index(i, j, k)];
  }
  Scalar at(int i, int j, int k) const {
    check_bounds(i, j, k);
    return data_[linear_index(i, j, k)];
  }

  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_.x() && j < dims_.y() && k < dims_.z();
  }

  std::vector<Scalar>& raw() { return data_; }
  const std::vector<Scalar>& raw() const { return data_; }

  /// World coordinate (mm) of a voxel index.
  Eigen::Vector3d voxel_to_world(const Eigen::Vector3d& index) const {
    Eigen::Vector4d h(index.x(), index.y(), index.z(), 1.0);
    return (affine_ * h).head<3>();
  }

  bool same_shape(const Volume& other) const { return dims_ == other.dims_; }

  template <typename Fn>
  void for_each_index(Fn&& fn) const {
    for (int k = 0; k < dims_.z(); ++k)
      for (int j = 0; j < dims_.y(); ++j)
        for (int i = 0; i < dims_.x(); ++i) fn(i, j, k);
  }

private:
  void check_bounds(int i, int j, int k) const {
    if (!contains(i, j, k))
      throw DomainError("voxel index (" + std::to_string(i) + "," + std::to_string(j) + "," +
                        std::to_string(k) + ") out of bounds");
  }

  Eigen::Vector3i dims_;
  Eigen::Matrix4d affine_;
  std::vector<Scalar> data_;
};

using VolumeGrid = Volume<float>;
using MaskVolume = Volume<std::uint8_t>;

/// Integer label field plus the name of the class map its values refer to.
struct LabelVolume {
  Volume<std::int32_t> labels;
  std::string class_map_name;
};

/// Binary mask of one label value.
template <typename Scalar>
MaskVolume mask_of_label(const Volume<Scalar>& labels, Scalar value) {
  MaskVolume m(labels.dims(), labels.affine(), 0);
  const auto& src = labels.raw();
  auto& dst = m.raw();
  for (std::size_t n = 0; n < src.size(); ++n) dst[n] = (src[n] == value) ? 1 : 0;
  return m;
}

template <typename Scalar>
std::size_t count_nonzero(const Volume<Scalar>& v) {
  std::size_t n = 0;
  for (const auto& x : v.raw())
    if (x != Scalar(0)) ++n;
  return n;
}

}  // namespace aarchive
