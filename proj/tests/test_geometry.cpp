#include "doctest.h"

#include "jarvis/geometry/box.hpp"
#include "jarvis/numerics/errors.hpp"
#include "jarvis/numerics/rng.hpp"

using namespace jarvis;

namespace {

BoundingBox random_box(RngStream& rng) {
  double x0 = rng.uniform(), x1 = rng.uniform(), y0 = rng.uniform(), y1 = rng.uniform();
  if (x1 < x0) std::swap(x0, x1);
  if (y1 < y0) std::swap(y0, y1);
  return clamp_box(x0, y0, x1, y1);
}

// Area of a union of two boxes by grid counting, used as an oracle for IoU.
double raster_iou(const BoundingBox& a, const BoundingBox& b, int n) {
  long inter = 0, uni = 0;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) / n;
    for (int j = 0; j < n; ++j) {
      const double y = (j + 0.5) / n;
      const bool ina = x >= a.x_lt && x <= a.x_rb && y >= a.y_lt && y <= a.y_rb;
      const bool inb = x >= b.x_lt && x <= b.x_rb && y >= b.y_lt && y <= b.y_rb;
      inter += ina && inb;
      uni += ina || inb;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("iou") {
  const auto full = make_box(0.0, 0.0, 1.0, 1.0);
  const auto half = make_box(0.0, 0.0, 0.5, 1.0);
  CHECK(iou(full, full) == 1.0);
  CHECK(iou(make_box(0.0, 0.0, 0.2, 0.2), make_box(0.5, 0.5, 0.9, 0.9)) == 0.0);
  CHECK(iou(full, half) == doctest::Approx(0.5).epsilon(1e-15));
  // touching edges share no area
  CHECK(iou(make_box(0.0, 0.0, 0.5, 1.0), make_box(0.5, 0.0, 1.0, 1.0)) == 0.0);

  RngStream rng(11, 0);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    CHECK(iou(a, b) == doctest::Approx(raster_iou(a, b, 600)).epsilon(0.02).scale(1.0));
  }
}

TEST_CASE("giou") {
  const auto full = make_box(0.0, 0.0, 1.0, 1.0);
  CHECK(giou(full, full) == 1.0);
  CHECK(giou(make_box(0.0, 0.0, 0.1, 0.1), make_box(0.9, 0.9, 1.0, 1.0)) == doctest::Approx(-0.98).epsilon(1e-12));
  CHECK(giou(full, make_box(0.0, 0.0, 0.5, 1.0)) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("box_l1") {
  const auto full = make_box(0.0, 0.0, 1.0, 1.0);
  CHECK(box_l1(full, full) == 0.0);
  CHECK(box_l1(full, make_box(0.1, 0.0, 1.0, 1.0)) == doctest::Approx(0.1));
  RngStream rng(12, 0);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    const double want = std::abs(a.x_lt - b.x_lt) + std::abs(a.y_lt - b.y_lt) + std::abs(a.x_rb - b.x_rb) +
                        std::abs(a.y_rb - b.y_rb);
    CHECK(box_l1(a, b) == want);
  }
}

TEST_CASE("geometry_vector") {
  GeometryVector g1;
  g1 << 0, 0, 1, 1, 1, 1;
  CHECK(geometry_vector(make_box(0.0, 0.0, 1.0, 1.0)) == g1);
  const GeometryVector g2 = geometry_vector(make_box(0.2, 0.3, 0.5, 0.9));
  const double want[6] = {0.2, 0.3, 0.5, 0.9, 0.3, 0.6};
  for (int i = 0; i < 6; ++i) CHECK(g2(i) == doctest::Approx(want[i]).epsilon(1e-15));
  CHECK_THROWS_AS(geometry_vector(BoundingBox{0.3, 0.1, 0.3, 0.5}), ValidationError);
  CHECK_THROWS_AS(make_box(0.3, 0.1, 0.3, 0.5), ValidationError);
  CHECK_THROWS_AS(make_box(0.1, 0.1, 1.2, 0.5), ValidationError);
}

TEST_CASE("clamp_box widens degenerate boxes") {
  const auto b = clamp_box(0.4, 0.2, 0.4, 0.6);
  CHECK(is_valid(b));
  CHECK(b.width() == doctest::Approx(kMinBoxSide));
  CHECK(b.center_x() == doctest::Approx(0.4));
  const auto edge = clamp_box(1.0, 1.0, 1.0, 1.0);
  CHECK(is_valid(edge));
  const auto outside = clamp_box(-0.2, 0.5, 0.3, 1.4);
  CHECK(outside.x_lt == 0.0);
  CHECK(outside.y_rb == 1.0);
  // valid boxes pass through untouched
  const auto v = make_box(0.1, 0.2, 0.3, 0.4);
  CHECK(clamp_box(0.1, 0.2, 0.3, 0.4) == v);
  // two clamped degenerate boxes still give a finite GIoU
  CHECK(std::isfinite(giou(clamp_box(0.1, 0.1, 0.1, 0.1), clamp_box(0.9, 0.9, 0.9, 0.9))));
}

TEST_CASE("box algebra properties over random pairs") {
  RngStream rng(13, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    const double ab = iou(a, b), gab = giou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(gab == doctest::Approx(giou(b, a)).epsilon(1e-15));
    CHECK(gab <= ab + 1e-15);
    CHECK(gab > -1.0);
    CHECK(gab <= 1.0);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(giou(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(box_l1(a, a) == 0.0);
  }
  // enclosing box equals the union: nested boxes
  const auto outer = make_box(0.1, 0.1, 0.9, 0.9), inner = make_box(0.2, 0.3, 0.5, 0.6);
  CHECK(giou(outer, inner) == doctest::Approx(iou(outer, inner)).epsilon(1e-15));
}
