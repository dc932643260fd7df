#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "dvdet/pointconv.hpp"
#include "dvdet/random.hpp"
#include "dvdet/voxelization.hpp"

using namespace dvdet;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, std::size_t c, double side) {
  std::vector<Point3> pts;
  std::vector<double> f;
  for (std::size_t i = 0; i < n; ++i) {
    pts.emplace_back(rng.uniform(0, side), rng.uniform(0, side), rng.uniform(0, side));
    for (std::size_t ch = 0; ch < c; ++ch) f.push_back(rng.uniform(-1, 1));
  }
  return PointCloud(std::move(pts), std::move(f), c);
}

ConvKernel random_kernel(Rng& rng, std::size_t k, std::size_t ci, std::size_t co, bool bias) {
  ConvKernel kern(k, ci, co);
  for (double& w : kern.weights()) w = rng.uniform(-1, 1);
  if (bias) {
    for (double& b : kern.bias()) b = rng.uniform(-1, 1);
  }
  return kern;
}

BackboneConfig small_backbone() {
  BackboneConfig cfg;
  cfg.blocks = {{0.2, 0.3, 3, 4, 2}, {0.4, 0.6, 3, 6, 1}, {0.8, 1.2, 3, 5, 2}};
  cfg.sampling.extents = Extents{Point3(0, 0, 0), 4, 4, 4};
  return cfg;
}

}  // namespace

TEST_CASE("ConvKernel shape checks") {
  CHECK_THROWS_AS(ConvKernel(3, 2, 2, std::vector<double>(10), std::vector<double>(2)), ShapeError);
  CHECK_THROWS_AS(ConvKernel(3, 2, 2, std::vector<double>(108), std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(ConvKernel(0, 2, 2), ShapeError);
  CHECK(ConvKernel(3, 2, 4).weights().size() == 27 * 2 * 4);
}

TEST_CASE("glorot init stays within its bound") {
  Rng rng(1);
  const ConvKernel k = glorot_kernel(3, 16, 32, rng);
  const double limit = std::sqrt(6.0 / (27.0 * 16 + 27.0 * 32));
  CHECK(std::all_of(k.weights().begin(), k.weights().end(),
                    [&](double w) { return std::abs(w) <= limit; }));
  CHECK(std::all_of(k.bias().begin(), k.bias().end(), [](double b) { return b == 0.0; }));
}

TEST_CASE("pointwise_conv examples") {
  SUBCASE("zero tensor, zero bias") {
    Rng rng(2);
    const auto k = random_kernel(rng, 3, 2, 4, false);
    const LocalVoxelTensor v(3, 2, Point3(0, 0, 0), 1.0);
    const auto out = pointwise_conv(v, k, Activation::Identity);
    CHECK(std::all_of(out.begin(), out.end(), [](double o) { return o == 0.0; }));
  }
  SUBCASE("single voxel, all-ones kernel") {
    ConvKernel k(3, 1, 1);
    std::fill(k.weights().begin(), k.weights().end(), 1.0);
    LocalVoxelTensor v(3, 1, Point3(0, 0, 0), 1.0);
    v.voxel(0, 2, 1)[0] = 4.25;
    CHECK(pointwise_conv(v, k, Activation::Identity) == std::vector<double>{4.25});
    v.voxel(0, 2, 1)[0] = -4.25;
    CHECK(pointwise_conv(v, k) == std::vector<double>{0.0});
  }
  SUBCASE("linearity without bias") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      const auto k = random_kernel(rng, 3, 3, 5, false);
      LocalVoxelTensor v(3, 3, Point3(0, 0, 0), 1.0);
      for (double& x : v.data()) x = rng.uniform(-1, 1);
      const double a = rng.uniform(-3, 3);
      LocalVoxelTensor av = v;
      for (double& x : av.data()) x *= a;
      const auto base = pointwise_conv(v, k, Activation::Identity);
      const auto scaled = pointwise_conv(av, k, Activation::Identity);
      for (std::size_t o = 0; o < base.size(); ++o) CHECK(scaled[o] == doctest::Approx(a * base[o]).epsilon(1e-12));
    }
  }
  SUBCASE("contraction layout matches the definition") {
    Rng rng(4);
    const auto k = random_kernel(rng, 3, 2, 3, true);
    LocalVoxelTensor v(3, 2, Point3(0, 0, 0), 1.0);
    for (double& x : v.data()) x = rng.uniform(-1, 1);
    const auto out = pointwise_conv(v, k, Activation::Identity);
    for (std::size_t o = 0; o < 3; ++o) {
      double expect = k.bias()[o];
      for (std::size_t ix = 0; ix < 3; ++ix)
        for (std::size_t iy = 0; iy < 3; ++iy)
          for (std::size_t iz = 0; iz < 3; ++iz)
            for (std::size_t ci = 0; ci < 2; ++ci) {
              const std::size_t voxel = (ix * 3 + iy) * 3 + iz;
              expect += v.voxel(ix, iy, iz)[ci] * k.weights()[(voxel * 2 + ci) * 3 + o];
            }
      CHECK(out[o] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("shape mismatch") {
    const LocalVoxelTensor v(3, 2, Point3(0, 0, 0), 1.0);
    CHECK_THROWS_AS(pointwise_conv(v, ConvKernel(3, 3, 1)), ShapeError);
    CHECK_THROWS_AS(pointwise_conv(v, ConvKernel(5, 2, 1)), ShapeError);
    const double in[] = {1.0, 2.0};
    CHECK_THROWS_AS(dense(in, ConvKernel(1, 3, 1)), ShapeError);
  }
}

TEST_CASE("conv_layer") {
  Rng rng(5);
  const PointCloud cloud = random_cloud(rng, 400, 2, 2.0);
  VoxelizationConfig cfg;
  cfg.radius = 0.3;

  SUBCASE("empty key-points") {
    const auto out = conv_layer(cloud, PointCloud(2), cfg, random_kernel(rng, 3, 2, 4, true));
    CHECK(out.empty());
    CHECK(out.channels() == 4);
  }
  SUBCASE("tiny radius acts as a per-point dense layer") {
    VoxelizationConfig tiny;
    tiny.radius = 1e-9;
    tiny.k = 1;
    const auto k = random_kernel(rng, 1, 2, 3, true);
    const auto out = conv_layer(cloud, cloud, tiny, k, Activation::Identity);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto expect = dense(cloud.feature(i), k, Activation::Identity);
      for (std::size_t o = 0; o < 3; ++o) CHECK(out.feature(i)[o] == doctest::Approx(expect[o]).epsilon(1e-12));
    }
  }
  SUBCASE("equals voxelize_batch followed by pointwise_conv") {
    const auto k = random_kernel(rng, 3, 2, 4, true);
    const PointCloud keys = random_cloud(rng, 60, 0, 2.0);
    const auto out = conv_layer(cloud, keys, cfg, k);
    const auto tensors = voxelize_batch(cloud, keys.points(), cfg);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto f = pointwise_conv(tensors[i], k);
      CHECK(std::equal(f.begin(), f.end(), out.feature(i).begin()));
      CHECK(out.point(i) == keys.point(i));
    }
  }
  SUBCASE("permuting the input cloud leaves features unchanged") {
    const auto k = random_kernel(rng, 3, 2, 4, true);
    const PointCloud keys = random_cloud(rng, 40, 0, 2.0);
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    PointCloud shuffled(2);
    for (const auto i : perm) shuffled.push_back(cloud.point(i), cloud.feature(i));
    const auto a = conv_layer(cloud, keys, cfg, k);
    const auto b = conv_layer(shuffled, keys, cfg, k);
    for (std::size_t i = 0; i < a.features().size(); ++i) {
      CHECK(a.features()[i] == doctest::Approx(b.features()[i]).epsilon(1e-9));
    }
  }
  SUBCASE("translation equivariance") {
    const auto k = random_kernel(rng, 3, 2, 4, true);
    const PointCloud keys = random_cloud(rng, 40, 0, 2.0);
    const Point3 shift(5.5, -2.25, 1.0);
    std::vector<Point3> moved, moved_keys;
    for (const auto& p : cloud.points()) moved.push_back(p + shift);
    for (const auto& p : keys.points()) moved_keys.push_back(p + shift);
    const auto a = conv_layer(cloud, keys, cfg, k);
    const auto b = conv_layer(PointCloud(moved, cloud.features(), 2), PointCloud(moved_keys, {}, 0), cfg, k);
    for (std::size_t i = 0; i < a.features().size(); ++i) {
      CHECK(std::abs(a.features()[i] - b.features()[i]) <= 1e-6);
    }
  }
  SUBCASE("kernel shape must match the voxelized input") {
    CHECK_THROWS_AS(conv_layer(cloud, cloud, cfg, ConvKernel(3, 3, 4)), ShapeError);
    cfg.append_offsets = true;
    CHECK_NOTHROW(conv_layer(cloud, PointCloud(0), cfg, ConvKernel(3, 5, 4)));
  }
}

TEST_CASE("default blocks") {
  const auto blocks = default_blocks();
  REQUIRE(blocks.size() == 4);
  const double res[] = {0.1, 0.2, 0.4, 0.8};
  const std::size_t ch[] = {16, 32, 64, 128};
  for (std::size_t b = 0; b < 4; ++b) {
    CHECK(blocks[b].resolution == res[b]);
    CHECK(blocks[b].radius == doctest::Approx(1.5 * res[b]));
    CHECK(blocks[b].k == 3);
    CHECK(blocks[b].channels == ch[b]);
    CHECK(blocks[b].layers == 2);
  }
  BackboneConfig cfg;
  cfg.blocks[2].resolution = 0.2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("backbone") {
  Rng rng(6);
  BackboneConfig cfg = small_backbone();
  const auto weights = init_backbone_weights(cfg, 1, 42);
  CHECK(weights.layers.size() == 5);

  SUBCASE("single point gives one key-point per block") {
    const PointCloud one({Point3(1, 1, 1)}, {1.0}, 1);
    const auto out = run_backbone(one, cfg, weights);
    CHECK(out.key_point_counts() == std::vector<std::size_t>{1, 1, 1});
    CHECK(out.concatenated.channels() == 4 + 6 + 5);
    CHECK(out.concatenated.size() == 1);
  }
  SUBCASE("counts are non-increasing and channels add up") {
    const PointCloud cloud = random_cloud(rng, 5000, 1, 4.0);
    const auto out = run_backbone(cloud, cfg, weights);
    const auto counts = out.key_point_counts();
    CHECK(std::is_sorted(counts.rbegin(), counts.rend()));
    CHECK(out.concatenated.channels() == 15);
    CHECK(out.concatenated.points() == out.blocks.back().points());
    CHECK(out.block_seconds.size() == 3);
    CHECK(out.peak_buffer_bytes == 20 * 20 * 20 * 4);
  }
  SUBCASE("thread count does not change the output") {
    const PointCloud cloud = random_cloud(rng, 3000, 1, 4.0);
    const auto a = run_backbone(cloud, cfg, weights);
    cfg.threads = 4;
    const auto b = run_backbone(cloud, cfg, weights);
    CHECK(a.concatenated == b.concatenated);
    for (std::size_t i = 0; i < a.blocks.size(); ++i) CHECK(a.blocks[i] == b.blocks[i]);
  }
  SUBCASE("permuting the input keeps the first block's occupied cells") {
    const PointCloud cloud = random_cloud(rng, 3000, 1, 4.0);
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    PointCloud rev(1);
    for (const auto i : perm) rev.push_back(cloud.point(i), cloud.feature(i));
    const auto a = run_backbone(cloud, cfg, weights);
    const auto b = run_backbone(rev, cfg, weights);
    SamplingConfig sc = cfg.sampling;
    sc.resolution = cfg.blocks[0].resolution;
    std::set<CellIndex> ca, cb;
    for (const auto& p : a.blocks[0].points()) ca.insert(sampling_cell(p, sc));
    for (const auto& p : b.blocks[0].points()) cb.insert(sampling_cell(p, sc));
    CHECK(ca == cb);
  }
  SUBCASE("mismatched weights are rejected") {
    auto bad = weights;
    bad.layers.pop_back();
    CHECK_THROWS_AS(run_backbone(random_cloud(rng, 10, 1, 1.0), cfg, bad), ShapeError);
    CHECK_THROWS_AS(check_backbone_weights(cfg, 2, weights), ShapeError);
  }
}

TEST_CASE("nearest_features") {
  const PointCloud src({Point3(0, 0, 0), Point3(1, 0, 0), Point3(0.5, 0, 0)}, {1, 2, 3}, 1);
  const PointCloud dst({Point3(0.1, 0, 0), Point3(0.75, 0, 0), Point3(5, 5, 5)}, {}, 0);
  const auto f = nearest_features(src, dst, 0.3);
  // Equidistant sources tie to the lowest index.
  CHECK(f == std::vector<double>{1, 2, 0});
}

TEST_CASE("kernel blob round trip") {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = 1 + 2 * rng.below(3);
    ConvKernel kern = random_kernel(rng, k, rng.below(5), 1 + rng.below(5), true);
    // Values representable in float32 survive exactly.
    for (double& w : kern.weights()) w = static_cast<float>(w);
    for (double& b : kern.bias()) b = static_cast<float>(b);
    std::stringstream ss;
    write_kernel(ss, kern);
    CHECK(ss.str().size() == 4 + 5 * 8 + 4 * (kern.weights().size() + kern.bias().size()));
    CHECK(read_kernel(ss) == kern);
  }
}

TEST_CASE("kernel blob layout is little-endian with the documented header") {
  ConvKernel kern(1, 1, 1, {1.0}, {-2.0});
  std::stringstream ss;
  write_kernel(ss, kern);
  const std::string b = ss.str();
  REQUIRE(b.size() == 52);
  CHECK(b.substr(0, 4) == "DVKW");
  CHECK(static_cast<unsigned char>(b[4]) == 1);  // k, low byte first
  CHECK(static_cast<unsigned char>(b[28]) == 1);  // weight count
  CHECK(static_cast<unsigned char>(b[36]) == 1);  // bias count
  // float32 1.0 = 0x3F800000, -2.0 = 0xC0000000
  CHECK(static_cast<unsigned char>(b[47]) == 0x3F);
  CHECK(static_cast<unsigned char>(b[46]) == 0x80);
  CHECK(static_cast<unsigned char>(b[51]) == 0xC0);
}

TEST_CASE("malformed kernel blobs raise ParseError") {
  ConvKernel kern(3, 2, 2);
  std::stringstream ss;
  write_kernel(ss, kern);
  const std::string good = ss.str();
  SUBCASE("bad magic") {
    std::stringstream in("XXXX" + good.substr(4));
    CHECK_THROWS_AS(read_kernel(in), ParseError);
  }
  SUBCASE("truncated") {
    std::stringstream in(good.substr(0, good.size() - 3));
    try {
      read_kernel(in);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      // The last float starts 4 bytes from the end; one of its bytes was read.
      CHECK(e.offset() == good.size() - 3);
    }
  }
  SUBCASE("inconsistent counts") {
    std::string bad = good;
    bad[36] = 5;
    std::stringstream in(bad);
    CHECK_THROWS_AS(read_kernel(in), ParseError);
  }
}
