#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "dvdet/pipeline.hpp"

using namespace dvdet;

namespace {

std::vector<unsigned char> kitti_bytes(const std::vector<float>& values) {
  std::vector<unsigned char> out;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  return out;
}

PipelineConfig small_config() {
  std::istringstream in(
      "blocks.resolution = 0.4, 0.8\n"
      "blocks.radius = 0.6, 1.2\n"
      "blocks.channels = 4, 6\n"
      "blocks.layers = 1, 1\n"
      "head.hidden = 8\n"
      "refine.channels = 4, 6, 5\n"
      "stage2.top_k = 8\n");
  return parse_config(in);
}

}  // namespace

TEST_CASE("config defaults") {
  const PipelineConfig cfg;
  CHECK(cfg.backbone.blocks.size() == 4);
  REQUIRE(cfg.backbone.sampling.extents.has_value());
  CHECK(cfg.backbone.sampling.extents->min == Point3(0, -40, -3));
  CHECK(cfg.roi.k == 5);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config round trip") {
  PipelineConfig cfg = small_config();
  cfg.backbone.sampling.strategy = SamplingStrategy::SortUnique;
  cfg.backbone.sampling.seed = 99;
  cfg.backbone.profile = VoxelizeProfile::Compact;
  cfg.anchor = {1.7, 4.1, 1.5};
  cfg.set_threads(3);
  std::istringstream in(format_config(cfg));
  const PipelineConfig back = parse_config(in);
  CHECK(format_config(back) == format_config(cfg));
  CHECK(back.backbone.blocks.size() == 2);
  CHECK(back.backbone.blocks[1].channels == 6);
  CHECK(back.backbone.sampling.strategy == SamplingStrategy::SortUnique);
  CHECK(back.threads() == 3);
  CHECK(back.anchor == cfg.anchor);
}

TEST_CASE("config errors carry the byte offset") {
  SUBCASE("unknown key") {
    std::istringstream in("# comment\nthreads = 2\nbogus = 1\n");
    try {
      parse_config(in);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 22);
    }
  }
  SUBCASE("bad number") {
    std::istringstream in("blocks.resolution = 0.1, x\n");
    CHECK_THROWS_AS(parse_config(in), ParseError);
  }
  SUBCASE("roi grid other than 5") {
    std::istringstream in("roi.grid = 4\n");
    CHECK_THROWS_AS(parse_config(in), ParseError);
  }
  SUBCASE("decreasing resolutions") {
    std::istringstream in("blocks.resolution = 0.4, 0.2\n");
    CHECK_THROWS_AS(parse_config(in), ParseError);
  }
}

TEST_CASE("KITTI binary parsing") {
  SUBCASE("one record") {
    const auto cloud = parse_kitti_bin(kitti_bytes({1.5f, -2.0f, 0.25f, 0.75f}));
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.point(0) == Point3(1.5, -2.0, 0.25));
    CHECK(cloud.channels() == 1);
    CHECK(cloud.feature(0)[0] == 0.75);
  }
  SUBCASE("empty input") { CHECK(parse_kitti_bin({}).empty()); }
  SUBCASE("length not a multiple of 16") {
    auto bytes = kitti_bytes({1, 2, 3, 4});
    bytes.push_back(0);
    try {
      parse_kitti_bin(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 16);
    }
  }
  SUBCASE("non-finite value") {
    const auto bytes = kitti_bytes({1, 2, 3, 4, 0, std::numeric_limits<float>::quiet_NaN(), 0, 0});
    try {
      parse_kitti_bin(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 16);
    }
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "dvdet_test_cloud.bin";
    const PointCloud cloud({Point3(1, 2, 3), Point3(-4, 5.5, 0)}, {0.5, 0.25}, 1);
    write_kitti_bin(path, cloud);
    CHECK(std::filesystem::file_size(path) == 32);
    CHECK(read_kitti_bin(path) == cloud);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_kitti_bin(path), ParseError);
  }
}

TEST_CASE("synthetic scenes") {
  const auto a = synth_scene(5000, 4, 7);
  const auto b = synth_scene(5000, 4, 7);
  CHECK(a.cloud == b.cloud);
  CHECK(a.boxes == b.boxes);
  CHECK(a.cloud.size() == 5000);
  CHECK(a.boxes.size() == 4);
  const Extents crop = kitti_crop();
  for (const auto& p : a.cloud.points()) CHECK(crop.contains(p));
  std::size_t on_boxes = 0;
  for (const auto& box : a.boxes) on_boxes += points_in_box(a.cloud, box).size();
  CHECK(on_boxes >= 1400);
  CHECK_FALSE(synth_scene(5000, 4, 8).cloud == a.cloud);
}

TEST_CASE("model weights") {
  const PipelineConfig cfg = small_config();
  const auto w = init_model_weights(cfg, 1, 5);
  CHECK_NOTHROW(check_model_weights(cfg, 1, w));
  CHECK_THROWS_AS(check_model_weights(cfg, 2, w), ShapeError);

  std::stringstream ss;
  write_model_weights(ss, w);
  const auto back = read_model_weights(ss, cfg, 1);
  std::stringstream again;
  write_model_weights(again, back);
  CHECK(again.str() == ss.str());

  std::stringstream wrong_cfg(ss.str());
  CHECK_THROWS_AS(read_model_weights(wrong_cfg, PipelineConfig(), 1), ShapeError);
  std::stringstream truncated(ss.str().substr(0, 100));
  CHECK_THROWS_AS(read_model_weights(truncated, cfg, 1), ParseError);
}

TEST_CASE("forward pass") {
  PipelineConfig cfg = small_config();
  const auto weights = init_model_weights(cfg, 1, 5);
  const auto scene = synth_scene(20000, 3, 11);

  SUBCASE("empty cloud") {
    const auto r = run_forward(PointCloud(1), cfg, weights);
    CHECK(r.proposals.empty());
    CHECK(r.refined.empty());
    CHECK(r.key_point_counts == std::vector<std::size_t>{0, 0});
  }
  SUBCASE("shapes, counts and timing") {
    const auto r = run_forward(scene.cloud, cfg, weights);
    REQUIRE(r.key_point_counts.size() == 2);
    CHECK(r.key_point_counts[0] >= r.key_point_counts[1]);
    CHECK(r.proposals.size() == r.key_point_counts[1]);
    CHECK(r.refined.size() == std::min<std::size_t>(8, r.proposals.size()));
    std::vector<std::string> names;
    double sum = 0.0;
    for (const auto& s : r.report.stages) {
      names.push_back(s.name);
      sum += s.seconds;
    }
    CHECK(names == std::vector<std::string>{"input", "block0", "block1", "concat",
                                            "proposal_head", "roi_pool", "refine"});
    CHECK(sum <= r.report.total_seconds * 1.0001);
    CHECK(sum >= r.report.total_seconds * 0.95);
    CHECK(r.report.peak_buffer_bytes > 0);
  }
  SUBCASE("deterministic across threads") {
    const auto a = run_forward(scene.cloud, cfg, weights);
    cfg.set_threads(4);
    const auto b = run_forward(scene.cloud, cfg, weights);
    CHECK(a.proposals == b.proposals);
    CHECK(a.refined == b.refined);
    CHECK(a.key_point_counts == b.key_point_counts);
  }
  SUBCASE("points outside the crop are dropped") {
    PointCloud cloud = scene.cloud;
    const double f = 1.0;
    cloud.push_back(Point3(-5, 0, 0), std::span<const double>(&f, 1));
    CHECK(run_forward(cloud, cfg, weights).dropped_points == 1);
  }
}

TEST_CASE("with_input_channel") {
  const PointCloud bare({Point3(0, 0, 0)}, {}, 0);
  const auto c = with_input_channel(bare);
  CHECK(c.channels() == 1);
  CHECK(c.feature(0)[0] == 1.0);
  const PointCloud two({Point3(0, 0, 0)}, {3, 4}, 2);
  CHECK(with_input_channel(two) == two);
}

TEST_CASE("loglog_slope") {
  const std::vector<double> x{1, 10, 100};
  CHECK(loglog_slope(x, std::vector<double>{2, 20, 200}) == doctest::Approx(1.0));
  CHECK(loglog_slope(x, std::vector<double>{1, 100, 10000}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(loglog_slope(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  CHECK_THROWS_AS(loglog_slope(x, std::vector<double>{1, 0, 1}), std::invalid_argument);
}

TEST_CASE("bench") {
  BenchConfig cfg;
  cfg.sizes = {2000, 8000};
  cfg.repeats = 1;
  const auto t = bench(cfg);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.stages.size() == 3);
  CHECK(t.slopes.size() == t.stages.size());
  for (const auto& row : t.rows) {
    CHECK(row.peak_buffer_bytes == row.buffer_slots * 4);
    CHECK(static_cast<double>(row.buffer_slots) >= 4.0 * static_cast<double>(row.size));
  }
  cfg.sizes = {8000, 2000};
  CHECK_THROWS_AS(bench(cfg), std::invalid_argument);
}
