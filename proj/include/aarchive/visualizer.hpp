#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aarchive/image2d.hpp"
#include "aarchive/registry.hpp"
#include "aarchive/standardizer.hpp"
#include "aarchive/stats.hpp"
#include "aarchive/volume.hpp"

namespace aarchive {

/// CT display window, Table-4 style width/level pair in HU.
struct WindowSetting {
  double width = 350.0;
  double level = 50.0;

  double display_min() const { return level - width / 2.0; }
  double display_max() const { return level + width / 2.0; }
};

WindowSetting lung_window();         ///< 1500 / -600
WindowSetting soft_tissue_window();  ///< 350 / 50
WindowSetting bone_window();         ///< 1800 / 400

/// Clamp-rescale one HU value to [0, 1] display units. DomainError unless
/// w.width > 0.
double apply_window(double value, const WindowSetting& w);

/// Elementwise clamp-rescale.
Image2D apply_window(const Image2D& values, const WindowSetting& w);

/// Table-4 window for an anatomy selector. The top category of every leaf
/// the selector expands to decides (bone / lung / soft_tissue); selections
/// spanning more than one category fall back to the soft-tissue window.
/// DomainError on names the registry cannot resolve.
WindowSetting select_window_for_anatomy(const std::string& name,
                                        const Registry& registry = Registry::builtin());

enum class Plane { Coronal, Sagittal, Transverse };

const char* to_string(Plane p);

/// Coronal unless the trunk is cut along the anterior-posterior axis, where
/// only the sagittal view shows the missing band.
Plane choose_control_plane(const CropReport& report);

/// Row-major 8-bit RGBA raster.
struct ImageRgba {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;

  ImageRgba() = default;
  ImageRgba(int r, int c) : rows(r), cols(c), pixels(static_cast<std::size_t>(r) * c * 4, 0) {}

  std::uint8_t* at(int r, int c) { return pixels.data() + 4 * (static_cast<std::size_t>(r) * cols + c); }
  const std::uint8_t* at(int r, int c) const {
    return pixels.data() + 4 * (static_cast<std::size_t>(r) * cols + c);
  }

  void set(int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue,
           std::uint8_t alpha = 255) {
    auto* p = at(r, c);
    p[0] = red;
    p[1] = green;
    p[2] = blue;
    p[3] = alpha;
  }
};

/// 8-bit RGBA PNG, non-interlaced, no ancillary chunks: fixed pixels give a
/// byte-identical file. IoError on an unwritable path.
void write_png(const ImageRgba& img, const std::string& path);

/// MIP along the plane normal, oriented for display: coronal and sagittal
/// put superior at the top row; the sagittal view runs anterior to posterior
/// left to right; transverse puts anterior at the top.
Image2D mip_project(const VolumeGrid& vol, Plane plane);

struct ControlImageSpec {
  Plane plane = Plane::Coronal;
  std::optional<WindowSetting> window;  ///< empty: auto display range
  std::optional<int> central_plane_z;   ///< reference-object central plane
  std::string output_path;              ///< empty: render without writing
};

/// Detection results feeding the overlay layers, all optional. Prosthesis
/// overlays only apply to the coronal plane (they are computed on the
/// coronal MIP above the lower bound).
struct ControlDetections {
  std::optional<VolumeBounds> bounds;
  std::optional<ProsthesisResult> prosthesis;
  std::optional<MaskVolume> body;  ///< trunk mask, outlined when body_cropped
  bool body_cropped = false;
  std::optional<MaskVolume> arms;
  std::optional<MaskVolume> legs;
};

/// Windowed MIP plus overlays: bounds as dashed red lines, prosthesis pixels
/// yellow, trunk contours magenta dash-dot, arm / leg contours yellow /
/// magenta, central plane a green line. Without an explicit window the
/// display range is [MIP min, MIP max], with the max replaced by the 99.5th
/// percentile of pixels outside detected bright objects when a prosthesis
/// result is supplied. Writes spec.output_path when non-empty and returns
/// the raster.
ImageRgba render_control_image(const VolumeGrid& vol, const ControlImageSpec& spec,
                               const ControlDetections& detections);

/// One transverse slice (pixel row = y, column = x) of a dense feature
/// volume as an RGBA overlay: masked values rescale into the red channel
/// (min -> 1, max -> 255, constant range -> 1), alpha = 255 at masked
/// voxels, every other channel and pixel 0. DomainError on shape mismatch,
/// an out-of-range slice, or a slice with no masked voxel.
ImageRgba render_feature_overlay(const Volume<double>& fmap, const MaskVolume& mask, int slice);

/// Box plot of per-feature OCCC values, one box per report: quartile box,
/// median line, caps at the 2.5th and 97.5th percentiles. Writes `path`
/// when non-empty. DomainError on an empty report list.
ImageRgba render_occc_boxplot(const std::vector<RobustnessReport>& reports,
                              const std::string& path = "");

}  // namespace aarchive
