#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "dvdet/core.hpp"
#include "dvdet/sampling.hpp"
#include "dvdet/voxelization.hpp"

namespace dvdet {

class Rng;

enum class Activation { ReLU, Identity };

/// Dense k*k*k*c_in*c_out kernel plus bias. Weight layout: (voxel * c_in + ci) * c_out + co,
/// with voxel = (ix*k + iy)*k + iz, matching LocalVoxelTensor. k = 1 doubles as a dense layer.
class ConvKernel {
 public:
  ConvKernel(std::size_t k, std::size_t c_in, std::size_t c_out);
  ConvKernel(std::size_t k, std::size_t c_in, std::size_t c_out, std::vector<double> weights,
             std::vector<double> bias);

  std::size_t resolution() const { return k_; }
  std::size_t in_channels() const { return c_in_; }
  std::size_t out_channels() const { return c_out_; }

  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  std::span<const double> bias() const { return bias_; }
  std::span<double> bias() { return bias_; }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;

 private:
  std::size_t k_;
  std::size_t c_in_;
  std::size_t c_out_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
ConvKernel glorot_kernel(std::size_t k, std::size_t c_in, std::size_t c_out, Rng& rng);

/// out[o] = act(bias[o] + sum over voxels and input channels of v * W).
std::vector<double> pointwise_conv(const LocalVoxelTensor& v, const ConvKernel& kernel,
                                   Activation act = Activation::ReLU);

/// Dense layer: a k = 1 kernel applied to a flat vector.
std::vector<double> dense(std::span<const double> input, const ConvKernel& kernel,
                          Activation act = Activation::ReLU);

/// Features at each key-point from the local tensor built over `cloud`.
PointCloud conv_layer(const PointCloud& cloud, const PointCloud& key_points,
                      const VoxelizationConfig& cfg, const ConvKernel& kernel,
                      Activation act = Activation::ReLU);

struct BlockSpec {
  double resolution = 0.1;
  double radius = 0.15;
  std::size_t k = 3;
  std::size_t channels = 16;
  std::size_t layers = 2;
};

/// Four blocks at 0.1/0.2/0.4/0.8 m, k = 3, widths 16/32/64/128, radius 1.5 r.
std::vector<BlockSpec> default_blocks();

struct BackboneConfig {
  std::vector<BlockSpec> blocks = default_blocks();
  /// Resolution and strategy fields are overridden per block; extents fix the lattice origin.
  SamplingConfig sampling;
  Activation activation = Activation::ReLU;
  VoxelizeProfile profile = VoxelizeProfile::Dense;
  bool append_offsets = false;
  unsigned threads = 1;

  void validate() const;
};

struct BackboneWeights {
  /// blocks[b].layers kernels per block, in order.
  std::vector<ConvKernel> layers;
};

BackboneWeights init_backbone_weights(const BackboneConfig& cfg, std::size_t input_channels,
                                      std::uint64_t seed);

/// Checks kernel count and shapes against the config; throws ShapeError.
void check_backbone_weights(const BackboneConfig& cfg, std::size_t input_channels,
                            const BackboneWeights& weights);

struct BackboneOutput {
  std::vector<PointCloud> blocks;
  /// Last-block key-points carrying every block's features side by side.
  PointCloud concatenated;
  /// Wall time per block (sampling plus convolutions) and for the concatenation.
  std::vector<double> block_seconds;
  double concat_seconds = 0.0;
  std::uint64_t peak_buffer_bytes = 0;
  /// Points outside the extents at the first downsampling.
  std::size_t dropped = 0;
  std::vector<std::size_t> key_point_counts() const;
};

BackboneOutput run_backbone(const PointCloud& cloud, const BackboneConfig& cfg,
                            const BackboneWeights& weights);

/// For each target point, the features of the nearest source point within `radius`
/// (ties to the lowest index), or zeros when none is in range.
std::vector<double> nearest_features(const PointCloud& source, const PointCloud& targets,
                                     double radius);

/// Little-endian blob: "DVKW", u64 k, c_in, c_out, weight count, bias count, then float32 values.
void write_kernel(std::ostream& out, const ConvKernel& kernel);
ConvKernel read_kernel(std::istream& in);

}  // namespace dvdet
