#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dvdet/core.hpp"
#include "dvdet/random.hpp"

using namespace dvdet;

namespace {

bool same_point_set(std::array<Vec2, 4> a, std::array<Vec2, 4> b, double tol) {
  for (const Vec2& p : a) {
    const bool found = std::any_of(b.begin(), b.end(), [&](const Vec2& q) {
      return std::abs(p.x - q.x) <= tol && std::abs(p.y - q.y) <= tol;
    });
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("Point3 rejects non-finite coordinates") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Point3(nan, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(Point3(0, inf, 0), std::invalid_argument);
  CHECK_THROWS_AS(Point3(0, 0, -inf), std::invalid_argument);
  CHECK_NOTHROW(Point3(1e300, -1e300, 0));
}

TEST_CASE("PointCloud keeps features aligned with points") {
  CHECK_THROWS_AS(PointCloud({Point3(0, 0, 0)}, {1.0, 2.0, 3.0}, 2), std::invalid_argument);
  PointCloud cloud(2);
  const double f0[] = {1.0, 2.0};
  const double f1[] = {3.0, 4.0};
  cloud.push_back(Point3(0, 0, 0), f0);
  cloud.push_back(Point3(1, 1, 1), f1);
  CHECK(cloud.size() == 2);
  CHECK(cloud.feature(1)[0] == 3.0);
  CHECK(cloud.feature(1)[1] == 4.0);
  const double bad[] = {1.0};
  CHECK_THROWS_AS(cloud.push_back(Point3(0, 0, 0), bad), std::invalid_argument);

  SUBCASE("zero channels is a valid cloud") {
    const PointCloud bare({Point3(0, 0, 0), Point3(1, 0, 0)}, {}, 0);
    CHECK(bare.size() == 2);
    CHECK(bare.feature(1).empty());
  }
}

TEST_CASE("cell_of uses floor semantics") {
  CHECK(cell_of(Point3(0.25, 0.35, 0.05), 0.1) == CellIndex{2, 3, 0});
  CHECK(cell_of(Point3(-0.05, 0.0, 0.0), 0.1) == CellIndex{-1, 0, 0});
  for (const double r : {0.01, 0.1, 1.0, 7.5}) CHECK(cell_of(Point3(0, 0, 0), r) == CellIndex{0, 0, 0});
  // A point on a boundary belongs to the higher cell.
  CHECK(cell_of(Point3(1.0, -1.0, 2.0), 0.5) == CellIndex{2, -2, 4});
  CHECK_THROWS_AS(cell_of(Point3(0, 0, 0), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(cell_of(Point3(0, 0, 0), -0.1), std::invalid_argument);
}

TEST_CASE("cell_of is consistent under lattice translations") {
  Rng rng(11);
  for (int t = 0; t < 2000; ++t) {
    // Resolution 0.25 keeps the integer shifts exact in binary.
    const double r = 0.25;
    const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
    const std::int64_t a = static_cast<std::int64_t>(rng.below(21)) - 10;
    const std::int64_t b = static_cast<std::int64_t>(rng.below(21)) - 10;
    const std::int64_t c = static_cast<std::int64_t>(rng.below(21)) - 10;
    const Point3 q = p + Point3(r * a, r * b, r * c);
    CHECK(cell_of(q, r) == cell_of(p, r) + CellIndex{a, b, c});
  }
}

TEST_CASE("LocalVoxelTensor is zero-initialised with k^3 c entries") {
  const LocalVoxelTensor t(3, 4, Point3(1, 2, 3), 0.5);
  CHECK(t.data().size() == 27 * 4);
  CHECK(std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; }));
  CHECK(t.offset(1, 2, 0) == ((1 * 3 + 2) * 3 + 0) * 4);
}

TEST_CASE("OrientedBox validates its parameters") {
  CHECK_THROWS_AS(OrientedBox(0, 0, 0, 0, 1, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(OrientedBox(0, 0, 0, 1, -1, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(OrientedBox(0, 0, 0, 1, 1, 1, std::nan("")), std::invalid_argument);
  const OrientedBox b(1, 2, 3, 2, 3, 4, 0.5);
  CHECK(b.volume() == 24.0);
  CHECK(b.params() == std::array<double, 7>{1, 2, 3, 2, 3, 4, 0.5});
}

TEST_CASE("box_corners_bev examples") {
  SUBCASE("axis aligned") {
    const auto c = box_corners_bev(OrientedBox(0, 0, 0, 2, 4, 1, 0));
    CHECK(same_point_set(c, {{{-1, 2}, {-1, -2}, {1, -2}, {1, 2}}}, 0.0));
    // Counterclockwise from the (-w/2, +l/2) corner.
    CHECK(c[0] == Vec2{-1, 2});
    CHECK(c[1] == Vec2{-1, -2});
    CHECK(c[2] == Vec2{1, -2});
    CHECK(c[3] == Vec2{1, 2});
  }
  SUBCASE("translated") {
    const auto c = box_corners_bev(OrientedBox(1, 1, 0, 2, 2, 1, 0));
    CHECK(same_point_set(c, {{{0, 0}, {2, 0}, {2, 2}, {0, 2}}}, 0.0));
  }
  SUBCASE("square quarter turn") {
    const auto a = box_corners_bev(OrientedBox(0, 0, 0, 2, 2, 1, 0));
    const auto b = box_corners_bev(OrientedBox(0, 0, 0, 2, 2, 1, std::numbers::pi / 2));
    CHECK(same_point_set(a, b, 1e-12));
  }
}

TEST_CASE("box corners are counterclockwise and 2 pi periodic") {
  Rng rng(5);
  for (int t = 0; t < 500; ++t) {
    const OrientedBox b(rng.uniform(-10, 10), rng.uniform(-10, 10), 0, rng.uniform(0.1, 5),
                        rng.uniform(0.1, 5), 1, rng.uniform(-10, 10));
    const OrientedBox b2(b.x(), b.y(), b.z(), b.w(), b.l(), b.h(), b.r() + 2 * std::numbers::pi);
    const auto c = box_corners_bev(b);
    const auto c2 = box_corners_bev(b2);
    double twice = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(c[i].x - c2[i].x) <= 1e-9);
      CHECK(std::abs(c[i].y - c2[i].y) <= 1e-9);
      const Vec2& p = c[i];
      const Vec2& q = c[(i + 1) % 4];
      twice += p.x * q.y - q.x * p.y;
    }
    CHECK(twice > 0.0);
    CHECK(0.5 * twice == doctest::Approx(b.w() * b.l()).epsilon(1e-9));
  }
}
