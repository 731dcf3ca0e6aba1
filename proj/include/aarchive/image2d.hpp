#pragma once

#include <Eigen/Dense>
#include <vector>

namespace aarchive {

using Image2D = Eigen::ArrayXXf;                                  ///< (row, col) scalar image
using Label2D = Eigen::ArrayXXi;                                  ///< 0 = background
using Binary2D = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Gradient magnitude with the 5-tap Farid-Simoncelli derivative filters
/// (separable interpolator/differentiator pair, replicated borders).
Image2D farid_gradient_magnitude(const Image2D& img);

/// Exact Euclidean distance to the nearest false pixel (two-pass parabolic
/// lower-envelope transform). True pixels with no false pixel anywhere get
/// the image diagonal.
Eigen::ArrayXXd distance_transform_edt(const Binary2D& mask);

/// Markers for watershed seeding: connected plateaus (8-connectivity) of
/// local maxima of `dist` over positive values. Labels 1..n in scan order.
Label2D local_maxima_markers(const Eigen::ArrayXXd& dist);

/// Priority-flood watershed: grows markers over `domain` in order of
/// decreasing `priority`, 4-connected, deterministic tie-breaking.
Label2D watershed(const Eigen::ArrayXXd& priority, const Label2D& markers,
                  const Binary2D& domain);

/// Binary morphology with a 3x3 square structuring element. Out-of-image
/// pixels count as set for erosion and clear for dilation, so border-touching
/// shapes keep their border rows through open/close.
Binary2D binary_erode_3x3(const Binary2D& m);
Binary2D binary_dilate_3x3(const Binary2D& m);
Binary2D binary_open_3x3(const Binary2D& m);
Binary2D binary_close_3x3(const Binary2D& m);

/// 8-connected component labeling, labels 1..n in scan order.
Label2D connected_components(const Binary2D& mask, int* count = nullptr);

/// Ordered outer boundary of each 8-connected component (Moore tracing,
/// clockwise, starting at the top-left-most pixel). Single-pixel components
/// yield a one-point contour.
std::vector<std::vector<Eigen::Vector2i>> moore_contours(const Binary2D& mask);

}  // namespace aarchive
