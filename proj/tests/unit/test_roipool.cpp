#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dvdet/random.hpp"
#include "dvdet/roipool.hpp"

using namespace dvdet;

TEST_CASE("to_box_frame undoes the box pose") {
  const OrientedBox box(1, 2, 3, 2, 4, 1, std::numbers::pi / 2);
  const Point3 q = to_box_frame(Point3(1, 3, 3.25), box);
  CHECK(q.x() == doctest::Approx(1.0));
  CHECK(std::abs(q.y()) < 1e-12);
  CHECK(q.z() == doctest::Approx(0.25));
}

TEST_CASE("points_in_box is boundary inclusive") {
  const OrientedBox box(0, 0, 0, 2, 2, 2, 0);
  const PointCloud cloud({Point3(1, 1, 1), Point3(1.0001, 0, 0), Point3(0, 0, 0)}, {}, 0);
  CHECK(points_in_box(cloud, box) == std::vector<std::uint32_t>{0, 2});
}

TEST_CASE("la_weight") {
  CHECK(std::abs(la_weight(0.0, 0.7) - std::exp(1.0)) <= 1e-12);
  CHECK(la_weight(0.7, 0.7) == 1.0);
  CHECK(la_weight(0.2, 1.0) > la_weight(0.5, 1.0));
}

TEST_CASE("la_pool examples") {
  const OrientedBox box(0, 0, 0, 5, 5, 5, 0);  // cells of edge 1, r = 1
  SUBCASE("point at a cell center weighs e") {
    const PointCloud cloud({Point3(0, 0, 0)}, {2.0}, 1);
    const auto roi = la_pool(cloud, box, {});
    CHECK(roi.k == 5);
    CHECK(std::abs(roi.cell(2, 2, 2)[0] - 2.0 * std::exp(1.0)) <= 1e-12);
    double total = 0.0;
    for (double v : roi.grid) total += std::abs(v);
    CHECK(std::abs(total - 2.0 * std::exp(1.0)) <= 1e-12);
  }
  SUBCASE("empty cells are zero and results are averaged") {
    const PointCloud cloud({Point3(0, 0, 0), Point3(0.3, 0, 0)}, {1.0, 3.0}, 1);
    const auto roi = la_pool(cloud, box, {});
    const double expect = 0.5 * (std::exp(1.0) + 3.0 * std::exp(0.7));
    CHECK(roi.cell(2, 2, 2)[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(roi.cell(0, 0, 0)[0] == 0.0);
  }
  SUBCASE("cells keep the n_max lowest-index points") {
    std::vector<Point3> pts;
    std::vector<double> f;
    for (int i = 0; i < 8; ++i) {
      pts.emplace_back(0, 0, 0);
      f.push_back(i);
    }
    const auto roi = la_pool(PointCloud(pts, f, 1), box, {5, 5});
    // mean of e*(0..4)
    CHECK(roi.cell(2, 2, 2)[0] == doctest::Approx(2.0 * std::exp(1.0)).epsilon(1e-12));
  }
  SUBCASE("points outside the box are ignored") {
    const PointCloud cloud({Point3(10, 0, 0)}, {1.0}, 1);
    const auto roi = la_pool(cloud, box, {});
    for (double v : roi.grid) CHECK(v == 0.0);
  }
  SUBCASE("rotating the cloud with the box leaves the grid unchanged") {
    Rng rng(3);
    std::vector<Point3> pts, rotated;
    std::vector<double> f;
    const OrientedBox b0(1, 2, 0, 3, 4, 2, 0.0);
    const double yaw = 0.9;
    const OrientedBox b1(1, 2, 0, 3, 4, 2, yaw);
    for (int i = 0; i < 300; ++i) {
      const double x = rng.uniform(-1.4, 1.4), y = rng.uniform(-1.9, 1.9), z = rng.uniform(-0.9, 0.9);
      pts.emplace_back(1 + x, 2 + y, z);
      rotated.emplace_back(1 + std::cos(yaw) * x - std::sin(yaw) * y,
                           2 + std::sin(yaw) * x + std::cos(yaw) * y, z);
      f.push_back(rng.uniform(-1, 1));
    }
    const auto a = la_pool(PointCloud(pts, f, 1), b0, {});
    const auto b = la_pool(PointCloud(rotated, f, 1), b1, {});
    for (std::size_t i = 0; i < a.grid.size(); ++i) CHECK(std::abs(a.grid[i] - b.grid[i]) <= 1e-9);
  }
  SUBCASE("invalid config") {
    CHECK_THROWS_AS(la_pool(PointCloud(1), box, {0, 5}), std::invalid_argument);
    CHECK_THROWS_AS(la_pool(PointCloud(1), box, {5, 0}), std::invalid_argument);
  }
}

TEST_CASE("conv3d_valid") {
  SUBCASE("all-ones kernel sums each window") {
    ConvKernel k(3, 1, 1);
    std::fill(k.weights().begin(), k.weights().end(), 1.0);
    std::vector<double> grid(4 * 4 * 4);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i);
    const auto out = conv3d_valid(grid, 4, k, Activation::Identity);
    REQUIRE(out.size() == 8);
    double expect = 0.0;
    for (std::size_t x = 1; x < 4; ++x)
      for (std::size_t y = 1; y < 4; ++y)
        for (std::size_t z = 1; z < 4; ++z) expect += grid[(x * 4 + y) * 4 + z];
    CHECK(out[7] == expect);
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(conv3d_valid(std::vector<double>(8), 2, ConvKernel(3, 1, 1), Activation::ReLU),
                    ShapeError);
    CHECK_THROWS_AS(conv3d_valid(std::vector<double>(10), 3, ConvKernel(3, 1, 1), Activation::ReLU),
                    ShapeError);
  }
}

TEST_CASE("refine head shapes") {
  const auto weights = init_refine_head(7, 11, 8, 12, 6);
  const OrientedBox box(0, 0, 0, 2, 2, 2, 0);
  SUBCASE("5^3 grid reduces to 1^3") {
    Rng rng(1);
    PooledRoi roi{5, 7, std::vector<double>(125 * 7), box};
    for (double& v : roi.grid) v = rng.uniform(-1, 1);
    const auto out = refine_head(roi, weights);
    CHECK(out.spatial_trace == std::vector<std::size_t>{5, 3, 1});
    CHECK(std::isfinite(out.confidence_logit));
    CHECK(std::isfinite(out.flip_logit));
  }
  SUBCASE("other grid sizes are rejected") {
    for (std::size_t g : {3, 4, 6}) {
      PooledRoi roi{g, 7, std::vector<double>(g * g * g * 7), box};
      CHECK_THROWS_AS(refine_head(roi, weights), ShapeError);
    }
  }
  SUBCASE("channel mismatch is rejected") {
    PooledRoi roi{5, 6, std::vector<double>(125 * 6), box};
    CHECK_THROWS_AS(refine_head(roi, weights), ShapeError);
  }
  SUBCASE("zero grid gives the bias path only") {
    PooledRoi roi{5, 7, std::vector<double>(125 * 7, 0.0), box};
    const auto a = refine_head(roi, weights);
    const auto b = refine_head(roi, weights);
    CHECK(a.residuals == b.residuals);
    // Glorot init has zero bias, so every output is zero.
    CHECK(a.confidence_logit == 0.0);
  }
}
