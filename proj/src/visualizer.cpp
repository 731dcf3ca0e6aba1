#include "aarchive/visualizer.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <limits>
#include <set>

#include "aarchive/errors.hpp"

namespace aarchive {

namespace {

constexpr std::uint8_t kRed[3] = {255, 0, 0};
constexpr std::uint8_t kYellow[3] = {255, 255, 0};
constexpr std::uint8_t kMagenta[3] = {255, 0, 255};
constexpr std::uint8_t kGreen[3] = {0, 255, 0};
constexpr std::uint8_t kBlack[3] = {0, 0, 0};

bool dash_on(int t) { return (t / 4) % 2 == 0; }

bool dash_dot_on(int t) {
  const int m = t % 10;
  return m < 5 || m == 7;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const auto n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void put(ImageRgba& img, int r, int c, const std::uint8_t color[3]) {
  if (r < 0 || c < 0 || r >= img.rows || c >= img.cols) return;
  img.set(r, c, color[0], color[1], color[2]);
}

template <typename Pattern>
void draw_h_line(ImageRgba& img, int row, const std::uint8_t color[3], Pattern&& on) {
  if (row < 0 || row >= img.rows) return;
  for (int c = 0; c < img.cols; ++c)
    if (on(c)) put(img, row, c, color);
}

void draw_v_line(ImageRgba& img, int col, int r0, int r1, const std::uint8_t color[3]) {
  for (int r = std::max(0, r0); r <= std::min(img.rows - 1, r1); ++r) put(img, r, col, color);
}

void draw_contours(ImageRgba& img, const Binary2D& mask, const std::uint8_t color[3],
                   bool dash_dot) {
  for (const auto& contour : moore_contours(mask)) {
    for (std::size_t t = 0; t < contour.size(); ++t) {
      if (dash_dot && !dash_dot_on(static_cast<int>(t))) continue;
      put(img, contour[t].x(), contour[t].y(), color);
    }
  }
}

/// Binary projection of a mask in the same display orientation as
/// mip_project.
Binary2D project_mask(const MaskVolume& mask, Plane plane) {
  const auto& d = mask.dims();
  switch (plane) {
    case Plane::Coronal: {
      Binary2D out = Binary2D::Constant(d.z(), d.y(), false);
      for (int k = 0; k < d.z(); ++k)
        for (int j = 0; j < d.y(); ++j)
          for (int i = 0; i < d.x(); ++i)
            if (mask(i, j, k)) {
              out(d.z() - 1 - k, j) = true;
              break;
            }
      return out;
    }
    case Plane::Sagittal: {
      Binary2D out = Binary2D::Constant(d.z(), d.x(), false);
      for (int k = 0; k < d.z(); ++k)
        for (int i = 0; i < d.x(); ++i)
          for (int j = 0; j < d.y(); ++j)
            if (mask(i, j, k)) {
              out(d.z() - 1 - k, i) = true;
              break;
            }
      return out;
    }
    case Plane::Transverse:
    default: {
      Binary2D out = Binary2D::Constant(d.x(), d.y(), false);
      for (int j = 0; j < d.y(); ++j)
        for (int i = 0; i < d.x(); ++i)
          for (int k = 0; k < d.z(); ++k)
            if (mask(i, j, k)) {
              out(i, j) = true;
              break;
            }
      return out;
    }
  }
}

std::uint8_t gray_byte(double v01) { return static_cast<std::uint8_t>(std::lround(v01 * 255.0)); }

}  // namespace

WindowSetting lung_window() { return {1500.0, -600.0}; }
WindowSetting soft_tissue_window() { return {350.0, 50.0}; }
WindowSetting bone_window() { return {1800.0, 400.0}; }

double apply_window(double value, const WindowSetting& w) {
  if (w.width <= 0.0) throw DomainError("window width must be positive");
  return clamp01((value - w.display_min()) / w.width);
}

Image2D apply_window(const Image2D& values, const WindowSetting& w) {
  if (w.width <= 0.0) throw DomainError("window width must be positive");
  const auto lo = static_cast<float>(w.display_min());
  const auto width = static_cast<float>(w.width);
  return ((values - lo) / width).max(0.0f).min(1.0f);
}

WindowSetting select_window_for_anatomy(const std::string& name, const Registry& registry) {
  bool known = false;
  registry.normalize_anatomy_name(name, known);
  if (!known)
    throw DomainError("cannot select a window for unknown anatomy '" + name + "'");
  const auto leaves = registry.expand_selection(name);
  if (leaves.empty())
    throw DomainError("anatomy '" + name + "' expands to no leaves");

  std::set<std::string> categories;
  for (const auto& leaf : leaves) categories.insert(registry.graph().top_category_of(leaf));
  if (categories.size() > 1) return soft_tissue_window();
  if (*categories.begin() == "bone") return bone_window();
  if (*categories.begin() == "lung") return lung_window();
  return soft_tissue_window();
}

const char* to_string(Plane p) {
  switch (p) {
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
    case Plane::Transverse: return "transverse";
  }
  return "?";
}

Plane choose_control_plane(const CropReport& report) {
  const auto touched = report.touched();
  if (touched.count(Side::Anterior) || touched.count(Side::Posterior)) return Plane::Sagittal;
  return Plane::Coronal;
}

void write_png(const ImageRgba& img, const std::string& path) {
  if (img.rows <= 0 || img.cols <= 0) throw DomainError("cannot write an empty image");
  if (img.pixels.size() != static_cast<std::size_t>(img.rows) * img.cols * 4)
    throw DomainError("pixel buffer does not match the image dimensions");

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    std::fclose(fp);
    throw IoError("libpng writer initialization failed");
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    std::fclose(fp);
    throw IoError("libpng info initialization failed");
  }

  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(img.rows));
  for (int r = 0; r < img.rows; ++r)
    row_ptrs[static_cast<std::size_t>(r)] = const_cast<png_bytep>(img.at(r, 0));

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed for '" + path + "'");
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols), static_cast<png_uint_32>(img.rows),
               8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("failed to finish writing '" + path + "'");
}

Image2D mip_project(const VolumeGrid& vol, Plane plane) {
  if (vol.empty()) throw DomainError("cannot project an empty volume");
  const auto& d = vol.dims();
  const float floor = std::numeric_limits<float>::lowest();
  switch (plane) {
    case Plane::Coronal: {
      Image2D img = Image2D::Constant(d.z(), d.y(), floor);
      for (int k = 0; k < d.z(); ++k)
        for (int j = 0; j < d.y(); ++j) {
          float m = floor;
          for (int i = 0; i < d.x(); ++i) m = std::max(m, vol(i, j, k));
          img(d.z() - 1 - k, j) = m;
        }
      return img;
    }
    case Plane::Sagittal: {
      Image2D img = Image2D::Constant(d.z(), d.x(), floor);
      for (int k = 0; k < d.z(); ++k)
        for (int i = 0; i < d.x(); ++i) {
          float m = floor;
          for (int j = 0; j < d.y(); ++j) m = std::max(m, vol(i, j, k));
          img(d.z() - 1 - k, i) = m;
        }
      return img;
    }
    case Plane::Transverse:
    default: {
      Image2D img = Image2D::Constant(d.x(), d.y(), floor);
      for (int j = 0; j < d.y(); ++j)
        for (int i = 0; i < d.x(); ++i) {
          float m = floor;
          for (int k = 0; k < d.z(); ++k) m = std::max(m, vol(i, j, k));
          img(i, j) = m;
        }
      return img;
    }
  }
}

ImageRgba render_control_image(const VolumeGrid& vol, const ControlImageSpec& spec,
                               const ControlDetections& detections) {
  const Image2D mip = mip_project(vol, spec.plane);
  const auto rows = static_cast<int>(mip.rows());
  const auto cols = static_cast<int>(mip.cols());
  const int nz = vol.dims().z();
  const bool z_rows = spec.plane != Plane::Transverse;

  // Bright-object pixels (prosthesis plus other implants) in display
  // coordinates; excluded from the automatic display range.
  Binary2D bright = Binary2D::Constant(rows, cols, false);
  if (detections.prosthesis.has_value() && spec.plane == Plane::Coronal) {
    const auto& labeled = detections.prosthesis->labeled;
    for (int r = 0; r < std::min<int>(rows, static_cast<int>(labeled.rows())); ++r)
      for (int c = 0; c < std::min<int>(cols, static_cast<int>(labeled.cols())); ++c)
        bright(r, c) = labeled(r, c) != 0;
  }

  Image2D display;
  if (spec.window.has_value()) {
    display = apply_window(mip, *spec.window);
  } else {
    const double lo = mip.minCoeff();
    double hi = mip.maxCoeff();
    if (detections.prosthesis.has_value() && bright.any()) {
      std::vector<double> kept;
      kept.reserve(static_cast<std::size_t>(rows) * cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          if (!bright(r, c)) kept.push_back(mip(r, c));
      if (!kept.empty()) {
        std::sort(kept.begin(), kept.end());
        hi = quantile_sorted(kept, 0.995);
      }
    }
    if (hi <= lo) hi = lo + 1.0;
    display = ((mip - static_cast<float>(lo)) / static_cast<float>(hi - lo)).max(0.0f).min(1.0f);
  }

  ImageRgba img(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const auto g = gray_byte(display(r, c));
      img.set(r, c, g, g, g);
    }

  if (detections.prosthesis.has_value() && spec.plane == Plane::Coronal) {
    const auto& pros = *detections.prosthesis;
    const std::set<int> keep(pros.prosthesis_labels.begin(), pros.prosthesis_labels.end());
    for (int r = 0; r < std::min<int>(rows, static_cast<int>(pros.labeled.rows())); ++r)
      for (int c = 0; c < std::min<int>(cols, static_cast<int>(pros.labeled.cols())); ++c)
        if (keep.count(pros.labeled(r, c))) put(img, r, c, kYellow);
  }

  if (detections.body.has_value() && detections.body_cropped)
    draw_contours(img, project_mask(*detections.body, spec.plane), kMagenta, true);
  if (detections.arms.has_value())
    draw_contours(img, project_mask(*detections.arms, spec.plane), kYellow, false);
  if (detections.legs.has_value())
    draw_contours(img, project_mask(*detections.legs, spec.plane), kMagenta, false);

  if (detections.bounds.has_value() && z_rows) {
    for (const BoundEntry* entry : {&detections.bounds->upper, &detections.bounds->lower})
      if (entry->valid() && entry->z < nz) draw_h_line(img, nz - 1 - entry->z, kRed, dash_on);
  }

  if (spec.central_plane_z.has_value() && z_rows) {
    const int z = *spec.central_plane_z;
    if (z >= 0 && z < nz) draw_h_line(img, nz - 1 - z, kGreen, [](int) { return true; });
  }

  if (!spec.output_path.empty()) write_png(img, spec.output_path);
  return img;
}

ImageRgba render_feature_overlay(const Volume<double>& fmap, const MaskVolume& mask, int slice) {
  if (fmap.dims() != mask.dims())
    throw DomainError("feature map and mask shapes differ");
  const auto& d = fmap.dims();
  if (slice < 0 || slice >= d.z())
    throw DomainError("slice " + std::to_string(slice) + " outside volume of depth " +
                      std::to_string(d.z()));

  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  bool on_slice = false;
  fmap.for_each_index([&](int i, int j, int k) {
    if (!mask(i, j, k)) return;
    mn = std::min(mn, fmap(i, j, k));
    mx = std::max(mx, fmap(i, j, k));
    if (k == slice) on_slice = true;
  });
  if (!on_slice)
    throw DomainError("mask is empty on slice " + std::to_string(slice));

  ImageRgba img(d.y(), d.x());
  for (int j = 0; j < d.y(); ++j)
    for (int i = 0; i < d.x(); ++i) {
      if (!mask(i, j, slice)) continue;
      std::uint8_t red = 1;
      if (mx > mn)
        red = static_cast<std::uint8_t>(
            std::lround((fmap(i, j, slice) - mn) / (mx - mn) * 254.0 + 1.0));
      img.set(j, i, red, 0, 0, 255);
    }
  return img;
}

ImageRgba render_occc_boxplot(const std::vector<RobustnessReport>& reports,
                              const std::string& path) {
  if (reports.empty()) throw DomainError("no robustness reports to plot");

  constexpr int kMargin = 30;
  constexpr int kBoxWidth = 40;
  constexpr int kGap = 30;
  constexpr int kHeight = 260;
  const auto n = static_cast<int>(reports.size());
  const int width = 2 * kMargin + n * kBoxWidth + (n - 1) * kGap;

  ImageRgba img(kHeight, width);
  for (int r = 0; r < kHeight; ++r)
    for (int c = 0; c < width; ++c) img.set(r, c, 255, 255, 255);

  const auto row_of = [&](double v) {
    return kMargin + static_cast<int>(std::lround((1.0 - clamp01(v)) * (kHeight - 2 * kMargin)));
  };

  draw_v_line(img, kMargin - 10, row_of(1.0), row_of(0.0), kBlack);
  for (double tick : {0.0, 0.5, 1.0})
    for (int c = kMargin - 14; c < kMargin - 9; ++c) put(img, row_of(tick), c, kBlack);

  for (int b = 0; b < n; ++b) {
    std::vector<double> values;
    for (const auto& row : reports[static_cast<std::size_t>(b)].rows)
      if (std::isfinite(row.occc)) values.push_back(row.occc);
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());

    const int c0 = kMargin + b * (kBoxWidth + kGap);
    const int c1 = c0 + kBoxWidth - 1;
    const int mid = (c0 + c1) / 2;
    const int r_lo = row_of(quantile_sorted(values, 0.025));
    const int r_q1 = row_of(quantile_sorted(values, 0.25));
    const int r_med = row_of(quantile_sorted(values, 0.5));
    const int r_q3 = row_of(quantile_sorted(values, 0.75));
    const int r_hi = row_of(quantile_sorted(values, 0.975));

    for (int c = c0; c <= c1; ++c) {
      put(img, r_q1, c, kBlack);
      put(img, r_q3, c, kBlack);
      put(img, r_med, c, kRed);
    }
    draw_v_line(img, c0, r_q3, r_q1, kBlack);
    draw_v_line(img, c1, r_q3, r_q1, kBlack);
    draw_v_line(img, mid, r_hi, r_q3, kBlack);
    draw_v_line(img, mid, r_q1, r_lo, kBlack);
    for (int c = mid - kBoxWidth / 4; c <= mid + kBoxWidth / 4; ++c) {
      put(img, r_hi, c, kBlack);
      put(img, r_lo, c, kBlack);
    }
  }

  if (!path.empty()) write_png(img, path);
  return img;
}

}  // namespace aarchive
