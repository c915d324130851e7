#pragma once

#include "jarvis/numerics/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace jarvis {

/// Axis-aligned box in normalized image coordinates, corners (lt, rb).
template <typename Scalar>
struct BoxT {
  Scalar x_lt{0};
  Scalar y_lt{0};
  Scalar x_rb{1};
  Scalar y_rb{1};

  Scalar width() const { return x_rb - x_lt; }
  Scalar height() const { return y_rb - y_lt; }
  Scalar area() const { return width() * height(); }
  Scalar center_x() const { return Scalar(0.5) * (x_lt + x_rb); }
  Scalar center_y() const { return Scalar(0.5) * (y_lt + y_rb); }

  bool operator==(const BoxT&) const = default;
};

using BoundingBox = BoxT<double>;

template <typename Scalar>
using GeometryVectorT = Eigen::Matrix<Scalar, 6, 1>;
using GeometryVector = GeometryVectorT<double>;

/// Smallest side a box may have after ingestion.
inline constexpr double kMinBoxSide = 1e-4;

template <typename Scalar>
bool is_valid(const BoxT<Scalar>& b) {
  auto in_unit = [](Scalar v) { return v >= Scalar(0) && v <= Scalar(1); };
  return in_unit(b.x_lt) && in_unit(b.y_lt) && in_unit(b.x_rb) && in_unit(b.y_rb) && b.x_lt < b.x_rb &&
         b.y_lt < b.y_rb;
}

template <typename Scalar>
std::string to_string(const BoxT<Scalar>& b) {
  std::ostringstream os;
  os << "[" << b.x_lt << "," << b.y_lt << "," << b.x_rb << "," << b.y_rb << "]";
  return os.str();
}

/// Builds a box and enforces the corner-ordering and unit-range invariants.
template <typename Scalar = double>
BoxT<Scalar> make_box(Scalar x_lt, Scalar y_lt, Scalar x_rb, Scalar y_rb) {
  BoxT<Scalar> b{x_lt, y_lt, x_rb, y_rb};
  if (!is_valid(b)) throw ValidationError("invalid box " + to_string(b));
  return b;
}

/// Ingestion path for detector output: clips to [0,1] and widens any side
/// shorter than kMinBoxSide about its center.
template <typename Scalar = double>
BoxT<Scalar> clamp_box(Scalar x_lt, Scalar y_lt, Scalar x_rb, Scalar y_rb) {
  auto clip = [](Scalar v) { return std::clamp(v, Scalar(0), Scalar(1)); };
  auto widen = [&](Scalar& lo, Scalar& hi) {
    lo = clip(lo);
    hi = clip(hi);
    if (hi < lo) std::swap(lo, hi);
    const Scalar min_side(kMinBoxSide);
    if (hi - lo < min_side) {
      Scalar c = Scalar(0.5) * (lo + hi);
      c = std::clamp(c, Scalar(0.5) * min_side, Scalar(1) - Scalar(0.5) * min_side);
      lo = c - Scalar(0.5) * min_side;
      hi = c + Scalar(0.5) * min_side;
    }
  };
  widen(x_lt, x_rb);
  widen(y_lt, y_rb);
  return BoxT<Scalar>{x_lt, y_lt, x_rb, y_rb};
}

template <typename Scalar>
Scalar intersection_area(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  const Scalar w = std::min(a.x_rb, b.x_rb) - std::max(a.x_lt, b.x_lt);
  const Scalar h = std::min(a.y_rb, b.y_rb) - std::max(a.y_lt, b.y_lt);
  if (w <= Scalar(0) || h <= Scalar(0)) return Scalar(0);
  return w * h;
}

template <typename Scalar>
Scalar iou(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  return inter / uni;
}

/// IoU minus the fraction of the enclosing box not covered by the union.
template <typename Scalar>
Scalar giou(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  const Scalar enclosing = (std::max(a.x_rb, b.x_rb) - std::min(a.x_lt, b.x_lt)) *
                           (std::max(a.y_rb, b.y_rb) - std::min(a.y_lt, b.y_lt));
  return inter / uni - (enclosing - uni) / enclosing;
}

template <typename Scalar>
Scalar box_l1(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  using std::abs;
  return abs(a.x_lt - b.x_lt) + abs(a.y_lt - b.y_lt) + abs(a.x_rb - b.x_rb) + abs(a.y_rb - b.y_rb);
}

/// [x_lt, y_lt, x_rb, y_rb, w, h]
template <typename Scalar>
GeometryVectorT<Scalar> geometry_vector(const BoxT<Scalar>& b) {
  if (!is_valid(b)) throw ValidationError("geometry_vector: invalid box " + to_string(b));
  GeometryVectorT<Scalar> g;
  g << b.x_lt, b.y_lt, b.x_rb, b.y_rb, b.width(), b.height();
  return g;
}

}  // namespace jarvis
