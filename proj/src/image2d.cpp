#include "aarchive/image2d.hpp"

#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>

#include "aarchive/errors.hpp"

namespace aarchive {

namespace {

// Farid-Simoncelli 5-tap interpolator p and first-derivative d1.
constexpr std::array<double, 5> kFaridP = {0.030320, 0.249724, 0.439911, 0.249724, 0.030320};
constexpr std::array<double, 5> kFaridD1 = {0.104550, 0.292315, 0.0, -0.292315, -0.104550};

int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// Separable 5-tap convolution: `row_taps` along rows, `col_taps` along
// columns, borders replicated.
Eigen::ArrayXXd conv_separable(const Eigen::ArrayXXd& img, const std::array<double, 5>& row_taps,
                               const std::array<double, 5>& col_taps) {
  const int rows = static_cast<int>(img.rows());
  const int cols = static_cast<int>(img.cols());
  Eigen::ArrayXXd tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int t = -2; t <= 2; ++t) acc += col_taps[t + 2] * img(r, clamp_index(c + t, cols));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int t = -2; t <= 2; ++t) acc += row_taps[t + 2] * tmp(clamp_index(r + t, rows), c);
      out(r, c) = acc;
    }
  return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// One pass of the parabolic lower-envelope squared-distance transform.
void edt_pass_1d(std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  if (n == 0) return;
  std::vector<int> v(n, 0);
  std::vector<double> z(n + 1);
  std::vector<double> d(n);
  int k = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
          (2.0 * q - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const int p = v[k];
    d[q] = (static_cast<double>(q) - p) * (q - p) + f[p];
  }
  f = std::move(d);
}

}  // namespace

Image2D farid_gradient_magnitude(const Image2D& img) {
  if (!img.isFinite().all()) throw DomainError("gradient input must be finite");
  const Eigen::ArrayXXd work = img.cast<double>();
  // d/dcol: differentiate along columns, smooth along rows; and vice versa.
  const Eigen::ArrayXXd gx = conv_separable(work, kFaridP, kFaridD1);
  const Eigen::ArrayXXd gy = conv_separable(work, kFaridD1, kFaridP);
  return (gx.square() + gy.square()).sqrt().cast<float>();
}

Eigen::ArrayXXd distance_transform_edt(const Binary2D& mask) {
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  // Finite stand-in for "no background anywhere": strictly above any
  // reachable squared distance, and keeps the envelope arithmetic NaN-free.
  const double cap = static_cast<double>(rows) * rows + static_cast<double>(cols) * cols;
  Eigen::ArrayXXd sq(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) sq(r, c) = mask(r, c) ? cap : 0.0;

  std::vector<double> line;
  for (int c = 0; c < cols; ++c) {
    line.assign(sq.col(c).data(), sq.col(c).data() + rows);
    edt_pass_1d(line);
    for (int r = 0; r < rows; ++r) sq(r, c) = line[r];
  }
  for (int r = 0; r < rows; ++r) {
    line.resize(cols);
    for (int c = 0; c < cols; ++c) line[c] = sq(r, c);
    edt_pass_1d(line);
    for (int c = 0; c < cols; ++c) sq(r, c) = line[c];
  }

  return sq.min(cap).sqrt();
}

Label2D local_maxima_markers(const Eigen::ArrayXXd& dist) {
  const int rows = static_cast<int>(dist.rows());
  const int cols = static_cast<int>(dist.cols());
  Binary2D peak(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double v = dist(r, c);
      bool is_peak = v > 0;
      for (int dr = -1; dr <= 1 && is_peak; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= rows || cc >= cols || (dr == 0 && dc == 0)) continue;
          if (dist(rr, cc) > v) {
            is_peak = false;
            break;
          }
        }
      peak(r, c) = is_peak;
    }
  return connected_components(peak);
}

Label2D watershed(const Eigen::ArrayXXd& priority, const Label2D& markers,
                  const Binary2D& domain) {
  const int rows = static_cast<int>(priority.rows());
  const int cols = static_cast<int>(priority.cols());
  if (markers.rows() != rows || markers.cols() != cols || domain.rows() != rows ||
      domain.cols() != cols)
    throw DomainError("watershed inputs must share one shape");

  struct Item {
    double priority;
    long order;
    int r, c;
    int label;
  };
  const auto later = [](const Item& a, const Item& b) {
    if (a.priority != b.priority) return a.priority < b.priority;  // max-heap on priority
    return a.order > b.order;                                      // then FIFO
  };
  std::priority_queue<Item, std::vector<Item>, decltype(later)> queue(later);

  Label2D out = Label2D::Zero(rows, cols);
  long order = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (markers(r, c) > 0 && domain(r, c)) {
        out(r, c) = markers(r, c);
        queue.push({priority(r, c), order++, r, c, markers(r, c)});
      }

  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};
  while (!queue.empty()) {
    const Item it = queue.top();
    queue.pop();
    for (int n = 0; n < 4; ++n) {
      const int rr = it.r + dr[n], cc = it.c + dc[n];
      if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
      if (!domain(rr, cc) || out(rr, cc) != 0) continue;
      out(rr, cc) = it.label;
      queue.push({priority(rr, cc), order++, rr, cc, it.label});
    }
  }
  return out;
}

namespace {

template <bool Erode>
Binary2D morph_3x3(const Binary2D& m) {
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());
  Binary2D out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      bool acc = Erode;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          // Outside the image counts as set for erosion and clear for
          // dilation, so shapes touching the border keep their border rows.
          const bool v = (rr < 0 || cc < 0 || rr >= rows || cc >= cols) ? Erode : m(rr, cc);
          if constexpr (Erode)
            acc = acc && v;
          else
            acc = acc || v;
        }
      out(r, c) = acc;
    }
  return out;
}

}  // namespace

Binary2D binary_erode_3x3(const Binary2D& m) { return morph_3x3<true>(m); }
Binary2D binary_dilate_3x3(const Binary2D& m) { return morph_3x3<false>(m); }
Binary2D binary_open_3x3(const Binary2D& m) { return binary_dilate_3x3(binary_erode_3x3(m)); }
Binary2D binary_close_3x3(const Binary2D& m) { return binary_erode_3x3(binary_dilate_3x3(m)); }

Label2D connected_components(const Binary2D& mask, int* count) {
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  Label2D out = Label2D::Zero(rows, cols);
  int next = 0;
  std::deque<std::pair<int, int>> frontier;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!mask(r, c) || out(r, c) != 0) continue;
      ++next;
      out(r, c) = next;
      frontier.push_back({r, c});
      while (!frontier.empty()) {
        const auto [cr, cc] = frontier.front();
        frontier.pop_front();
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = cr + dr, c2 = cc + dc;
            if (rr < 0 || c2 < 0 || rr >= rows || c2 >= cols) continue;
            if (mask(rr, c2) && out(rr, c2) == 0) {
              out(rr, c2) = next;
              frontier.push_back({rr, c2});
            }
          }
      }
    }
  if (count) *count = next;
  return out;
}

std::vector<std::vector<Eigen::Vector2i>> moore_contours(const Binary2D& mask) {
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  int n = 0;
  const Label2D labels = connected_components(mask, &n);

  // Clockwise Moore neighborhood starting east, in (dr, dc).
  constexpr int dr[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  constexpr int dc[8] = {1, 1, 0, -1, -1, -1, 0, 1};

  std::vector<std::vector<Eigen::Vector2i>> out;
  for (int label = 1; label <= n; ++label) {
    // Top-left-most pixel of the component.
    int sr = -1, sc = -1;
    for (int r = 0; r < rows && sr < 0; ++r)
      for (int c = 0; c < cols; ++c)
        if (labels(r, c) == label) {
          sr = r;
          sc = c;
          break;
        }

    std::vector<Eigen::Vector2i> contour;
    contour.emplace_back(sr, sc);
    // `dir` is the direction of the move that entered the current pixel; the
    // start is treated as entered moving east, so the backtrack points west.
    int cr = sr, cc = sc, dir = 0;
    while (true) {
      bool moved = false;
      // Scan clockwise starting just after the backtrack direction.
      for (int k = 0; k < 8; ++k) {
        const int d = (dir + 5 + k) % 8;  // one step clockwise of the reverse direction
        const int rr = cr + dr[d], c2 = cc + dc[d];
        if (rr < 0 || c2 < 0 || rr >= rows || c2 >= cols) continue;
        if (labels(rr, c2) == label) {
          cr = rr;
          cc = c2;
          dir = d;
          moved = true;
          break;
        }
      }
      if (!moved) break;  // isolated pixel
      if (cr == sr && cc == sc) break;
      contour.emplace_back(cr, cc);
    }
    out.push_back(std::move(contour));
  }
  return out;
}

}  // namespace aarchive
