#include "aarchive/orientation.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>

#include "aarchive/errors.hpp"

namespace aarchive {

namespace {

constexpr char kPositive[3] = {'R', 'A', 'S'};
constexpr char kNegative[3] = {'L', 'P', 'I'};

int world_axis_of(char code, int& sign) {
  for (int a = 0; a < 3; ++a) {
    if (code == kPositive[a]) {
      sign = 1;
      return a;
    }
    if (code == kNegative[a]) {
      sign = -1;
      return a;
    }
  }
  throw DomainError(std::string("invalid axis code '") + code + "'");
}

}  // namespace

AxCodes AxCodes::parse(const std::string& s) {
  std::string t;
  for (char c : s) {
    if (c == '+' || std::isspace(static_cast<unsigned char>(c))) continue;
    t.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (t.size() != 3) throw DomainError("axis codes must have exactly three letters: '" + s + "'");
  AxCodes out{{t[0], t[1], t[2]}};
  out.validate();
  return out;
}

void AxCodes::validate() const {
  bool seen[3] = {false, false, false};
  for (char c : codes) {
    int sign = 0;
    const int axis = world_axis_of(c, sign);
    if (seen[axis]) throw DomainError("duplicate axis pair in codes '" + str() + "'");
    seen[axis] = true;
  }
}

Orientation io_orientation(const Eigen::Matrix4d& affine) {
  const Eigen::Matrix3d rzs = affine.block<3, 3>(0, 0);
  if (std::abs(rzs.determinant()) < 1e-12) throw DomainError("affine 3x3 block is singular");

  // Normalize columns so the comparison is between direction cosines.
  Eigen::Matrix3d cs = rzs;
  for (int c = 0; c < 3; ++c) cs.col(c).normalize();

  // Greedy assignment: repeatedly take the largest remaining |cosine|.
  struct Cell {
    double mag;
    int world, input;
  };
  std::array<Cell, 9> cells;
  int n = 0;
  for (int w = 0; w < 3; ++w)
    for (int i = 0; i < 3; ++i) cells[n++] = {std::abs(cs(w, i)), w, i};
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    if (a.world != b.world) return a.world < b.world;
    return a.input < b.input;
  });

  bool world_used[3] = {false, false, false};
  bool input_used[3] = {false, false, false};
  Orientation ornt{};
  int assigned = 0;
  for (const auto& cell : cells) {
    if (assigned == 3) break;
    if (world_used[cell.world] || input_used[cell.input]) continue;
    world_used[cell.world] = true;
    input_used[cell.input] = true;
    ornt[cell.input] = {cell.world, cs(cell.world, cell.input) >= 0 ? 1 : -1};
    ++assigned;
  }
  return ornt;
}

AxCodes orientation_to_axcodes(const Orientation& ornt) {
  AxCodes out{};
  for (int i = 0; i < 3; ++i)
    out.codes[i] = ornt[i].flip > 0 ? kPositive[ornt[i].axis] : kNegative[ornt[i].axis];
  return out;
}

Orientation axcodes_to_orientation(const AxCodes& codes) {
  codes.validate();
  Orientation ornt{};
  for (int i = 0; i < 3; ++i) {
    int sign = 0;
    const int axis = world_axis_of(codes.codes[i], sign);
    ornt[i] = {axis, sign};
  }
  return ornt;
}

Orientation orientation_transform(const Orientation& start, const Orientation& end) {
  Orientation result{};
  for (int s = 0; s < 3; ++s) {
    bool matched = false;
    for (int e = 0; e < 3; ++e) {
      if (start[s].axis != end[e].axis) continue;
      result[s] = {e, start[s].flip == end[e].flip ? 1 : -1};
      matched = true;
      break;
    }
    if (!matched) throw DomainError("orientations do not span the same axes");
  }
  return result;
}

Eigen::Matrix4d inverse_orientation_affine(const Orientation& ornt, const Eigen::Vector3i& dims) {
  Eigen::Matrix4d t = Eigen::Matrix4d::Zero();
  t(3, 3) = 1.0;
  for (int i = 0; i < 3; ++i) {
    t(i, ornt[i].axis) = ornt[i].flip;
    if (ornt[i].flip < 0) t(i, 3) = dims[i] - 1;
  }
  return t;
}

AxCodes orientation_from_affine(const Eigen::Matrix4d& affine) {
  return orientation_to_axcodes(io_orientation(affine));
}

}  // namespace aarchive
