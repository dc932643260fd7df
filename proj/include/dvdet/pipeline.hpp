#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dvdet/core.hpp"
#include "dvdet/pointconv.hpp"
#include "dvdet/roipool.hpp"
#include "dvdet/sampling.hpp"

namespace dvdet {

/// x in [0, 70], y in [-40, 40], z in [-3, 1] meters.
Extents kitti_crop();

struct PipelineConfig {
  BackboneConfig backbone;
  RoiPoolConfig roi;
  /// Hidden widths of the per-key-point proposal perceptron; its output is 9 wide.
  std::vector<std::size_t> proposal_hidden{128, 64};
  /// conv1, conv2 and hidden widths of the refinement head.
  std::size_t refine_conv1 = 64;
  std::size_t refine_conv2 = 128;
  std::size_t refine_hidden = 64;
  /// Proposals with the highest foreground logits that go through the second stage.
  std::size_t stage2_top_k = 64;
  /// Mean car size (w, l, h) that box residuals scale.
  std::array<double, 3> anchor{1.6, 3.9, 1.56};

  PipelineConfig();
  unsigned threads() const { return backbone.threads; }
  void set_threads(unsigned t);
  void validate() const;
};

/// Parses `key = value` lines ('#' starts a comment) over the defaults.
PipelineConfig parse_config(std::istream& in);
PipelineConfig load_config(const std::filesystem::path& path);
/// Inverse of parse_config.
std::string format_config(const PipelineConfig& cfg);

/// Records of four little-endian float32 values (x, y, z, reflectance); reflectance is the feature.
PointCloud parse_kitti_bin(std::span<const unsigned char> bytes);
PointCloud read_kitti_bin(const std::filesystem::path& path);
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud);

struct SyntheticScene {
  PointCloud cloud;
  std::vector<OrientedBox> boxes;
};

/// Ground plane plus box-surface samples inside the KITTI crop; deterministic per seed.
SyntheticScene synth_scene(std::size_t n_points, std::size_t n_boxes, std::uint64_t seed);

struct ModelWeights {
  BackboneWeights backbone;
  std::vector<ConvKernel> proposal_head;
  RefineHeadWeights refine;
};

ModelWeights init_model_weights(const PipelineConfig& cfg, std::size_t input_channels,
                                std::uint64_t seed);
/// Throws ShapeError when any kernel disagrees with the config.
void check_model_weights(const PipelineConfig& cfg, std::size_t input_channels,
                         const ModelWeights& weights);
/// "DVMW", u64 kernel count, then kernel blobs: backbone, proposal head, refine head.
void write_model_weights(std::ostream& out, const ModelWeights& weights);
ModelWeights read_model_weights(std::istream& in, const PipelineConfig& cfg,
                                std::size_t input_channels);

struct Proposal {
  OrientedBox box{0, 0, 0, 1, 1, 1, 0};
  double confidence = 0.0;
  double flip_logit = 0.0;
  std::size_t key_point = 0;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct StageTiming {
  std::string name;
  double seconds = 0.0;
  std::size_t points_in = 0;
  std::size_t points_out = 0;
};

struct TimingReport {
  std::vector<StageTiming> stages;
  double total_seconds = 0.0;
  std::uint64_t peak_buffer_bytes = 0;
  double points_per_second = 0.0;
};

struct ForwardResult {
  std::vector<Proposal> proposals;
  std::vector<Proposal> refined;
  std::vector<std::size_t> key_point_counts;
  std::size_t dropped_points = 0;
  TimingReport report;
};

/// Clouds without features get a constant channel of ones.
PointCloud with_input_channel(const PointCloud& cloud);

/// Downsampling, backbone, proposal head, location-aware pooling and refinement.
ForwardResult run_forward(const PointCloud& cloud, const PipelineConfig& cfg,
                          const ModelWeights& weights);

struct BenchConfig {
  std::vector<std::size_t> sizes{10'000, 100'000, 1'000'000};
  std::size_t repeats = 3;
  double resolution = 0.1;
  /// Buffer slots per input point; the sample region grows with n to keep this constant.
  double slots_per_point = 4.0;
  bool include_voxelize = true;
  /// Each timing repeats the call until this much wall time has passed, then divides.
  double min_seconds = 0.05;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct BenchRow {
  std::size_t size = 0;
  /// Median seconds per stage, same order as BenchTable::stages.
  std::vector<double> median_seconds;
  double total_seconds = 0.0;
  std::uint64_t buffer_slots = 0;
  std::uint64_t peak_buffer_bytes = 0;
};

struct BenchTable {
  std::vector<std::string> stages;
  std::vector<BenchRow> rows;
  /// Least-squares slope of log(time) against log(size), per stage.
  std::vector<double> slopes;
};

BenchTable bench(const BenchConfig& cfg);

/// Least-squares slope of log(y) on log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace dvdet
