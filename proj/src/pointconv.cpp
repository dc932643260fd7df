#include "dvdet/pointconv.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>

#include "dvdet/parallel.hpp"
#include "dvdet/random.hpp"
#include "dvdet/wire.hpp"

namespace dvdet {

ConvKernel::ConvKernel(std::size_t k, std::size_t c_in, std::size_t c_out)
    : ConvKernel(k, c_in, c_out, std::vector<double>(k * k * k * c_in * c_out, 0.0),
                 std::vector<double>(c_out, 0.0)) {}

ConvKernel::ConvKernel(std::size_t k, std::size_t c_in, std::size_t c_out,
                       std::vector<double> weights, std::vector<double> bias)
    : k_(k), c_in_(c_in), c_out_(c_out), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (k == 0 || c_out == 0) throw ShapeError("ConvKernel: k and c_out must be positive");
  if (weights_.size() != k * k * k * c_in * c_out) {
    throw ShapeError("ConvKernel: weight count must equal k^3 * c_in * c_out");
  }
  if (bias_.size() != c_out) throw ShapeError("ConvKernel: bias length must equal c_out");
}

ConvKernel glorot_kernel(std::size_t k, std::size_t c_in, std::size_t c_out, Rng& rng) {
  ConvKernel kernel(k, c_in, c_out);
  const double k3 = static_cast<double>(k * k * k);
  const double fan = k3 * static_cast<double>(c_in) + k3 * static_cast<double>(c_out);
  const double limit = std::sqrt(6.0 / fan);
  for (double& w : kernel.weights()) w = rng.uniform(-limit, limit);
  return kernel;
}

namespace {

inline double activate(double v, Activation act) {
  return act == Activation::ReLU ? std::max(v, 0.0) : v;
}

// out[o] += sum_i input[i] * W[i * c_out + o]; input length = voxels * c_in.
void contract(std::span<const double> input, std::span<const double> weights,
              std::span<double> out) {
  const std::size_t c_out = out.size();
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    if (v == 0.0) continue;
    const double* row = weights.data() + i * c_out;
    for (std::size_t o = 0; o < c_out; ++o) out[o] += v * row[o];
  }
}

}  // namespace

std::vector<double> pointwise_conv(const LocalVoxelTensor& v, const ConvKernel& kernel,
                                   Activation act) {
  if (v.resolution() != kernel.resolution() || v.channels() != kernel.in_channels()) {
    throw ShapeError("pointwise_conv: tensor shape does not match kernel");
  }
  std::vector<double> out(kernel.bias().begin(), kernel.bias().end());
  contract(v.data(), kernel.weights(), out);
  for (double& o : out) o = activate(o, act);
  return out;
}

std::vector<double> dense(std::span<const double> input, const ConvKernel& kernel,
                          Activation act) {
  if (kernel.resolution() != 1 || input.size() != kernel.in_channels()) {
    throw ShapeError("dense: input length does not match kernel");
  }
  std::vector<double> out(kernel.bias().begin(), kernel.bias().end());
  contract(input, kernel.weights(), out);
  for (double& o : out) o = activate(o, act);
  return out;
}

PointCloud conv_layer(const PointCloud& cloud, const PointCloud& key_points,
                      const VoxelizationConfig& cfg, const ConvKernel& kernel, Activation act) {
  cfg.validate();
  if (kernel.resolution() != cfg.k ||
      kernel.in_channels() != cfg.output_channels(cloud.channels())) {
    throw ShapeError("conv_layer: kernel does not match voxelized input shape");
  }
  const std::size_t n = key_points.size();
  const std::size_t c_out = kernel.out_channels();
  std::vector<double> features(n * c_out);
  if (n != 0) {
    const AccelGrid grid(cloud, cfg.voxel_edge());
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      const auto tensor = voxelize(cloud, key_points.point(i), cfg, grid);
      const auto f = pointwise_conv(tensor, kernel, act);
      std::copy(f.begin(), f.end(), features.begin() + static_cast<std::ptrdiff_t>(i * c_out));
    });
  }
  return PointCloud(key_points.points(), std::move(features), c_out);
}

std::vector<BlockSpec> default_blocks() {
  std::vector<BlockSpec> blocks;
  const double res[] = {0.1, 0.2, 0.4, 0.8};
  const std::size_t widths[] = {16, 32, 64, 128};
  for (std::size_t b = 0; b < 4; ++b) {
    blocks.push_back({res[b], 1.5 * res[b], 3, widths[b], 2});
  }
  return blocks;
}

void BackboneConfig::validate() const {
  if (blocks.empty()) throw std::invalid_argument("BackboneConfig: at least one block required");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const BlockSpec& s = blocks[b];
    if (!(s.resolution > 0.0) || !(s.radius > 0.0) || s.k == 0 || s.k % 2 == 0 ||
        s.channels == 0 || s.layers == 0) {
      throw std::invalid_argument("BackboneConfig: invalid block " + std::to_string(b));
    }
    if (b > 0 && !(s.resolution > blocks[b - 1].resolution)) {
      throw std::invalid_argument("BackboneConfig: block resolutions must strictly increase");
    }
  }
}

namespace {

VoxelizationConfig block_voxel_config(const BackboneConfig& cfg, const BlockSpec& spec) {
  VoxelizationConfig v;
  v.radius = spec.radius;
  v.k = spec.k;
  v.append_offsets = cfg.append_offsets;
  v.profile = cfg.profile;
  v.threads = cfg.threads;
  return v;
}

// Kernel shapes in execution order.
std::vector<std::array<std::size_t, 3>> layer_shapes(const BackboneConfig& cfg,
                                                     std::size_t input_channels) {
  std::vector<std::array<std::size_t, 3>> shapes;
  std::size_t c = input_channels;
  const std::size_t extra = cfg.append_offsets ? 3 : 0;
  for (const BlockSpec& s : cfg.blocks) {
    for (std::size_t l = 0; l < s.layers; ++l) {
      shapes.push_back({s.k, c + extra, s.channels});
      c = s.channels;
    }
  }
  return shapes;
}

}  // namespace

BackboneWeights init_backbone_weights(const BackboneConfig& cfg, std::size_t input_channels,
                                      std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  BackboneWeights weights;
  for (const auto& [k, c_in, c_out] : layer_shapes(cfg, input_channels)) {
    weights.layers.push_back(glorot_kernel(k, c_in, c_out, rng));
  }
  return weights;
}

void check_backbone_weights(const BackboneConfig& cfg, std::size_t input_channels,
                            const BackboneWeights& weights) {
  const auto shapes = layer_shapes(cfg, input_channels);
  if (shapes.size() != weights.layers.size()) {
    throw ShapeError("backbone: expected " + std::to_string(shapes.size()) + " kernels, got " +
                     std::to_string(weights.layers.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const ConvKernel& w = weights.layers[i];
    if (w.resolution() != shapes[i][0] || w.in_channels() != shapes[i][1] ||
        w.out_channels() != shapes[i][2]) {
      throw ShapeError("backbone: kernel " + std::to_string(i) + " has the wrong shape");
    }
  }
}

std::vector<std::size_t> BackboneOutput::key_point_counts() const {
  std::vector<std::size_t> counts;
  for (const auto& b : blocks) counts.push_back(b.size());
  return counts;
}

std::vector<double> nearest_features(const PointCloud& source, const PointCloud& targets,
                                     double radius) {
  const std::size_t c = source.channels();
  std::vector<double> out(targets.size() * c, 0.0);
  if (source.empty() || targets.empty()) return out;
  const AccelGrid grid(source, radius);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Point3& p = targets.point(t);
    std::optional<std::uint32_t> best;
    double best_d2 = std::numeric_limits<double>::infinity();
    // Ascending order makes the first strict minimum the lowest index among ties.
    for (const std::uint32_t idx : radius_neighbors(grid, source, p, radius)) {
      const double d2 = squared_distance(source.point(idx), p);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = idx;
      }
    }
    if (best) {
      const auto f = source.feature(*best);
      std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>(t * c));
    }
  }
  return out;
}

BackboneOutput run_backbone(const PointCloud& cloud, const BackboneConfig& cfg,
                            const BackboneWeights& weights) {
  cfg.validate();
  check_backbone_weights(cfg, cloud.channels(), weights);
  BackboneOutput out;
  std::size_t layer = 0;
  out.blocks.reserve(cfg.blocks.size());
  const PointCloud* input = &cloud;
  using Clock = std::chrono::steady_clock;
  const auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  for (const BlockSpec& spec : cfg.blocks) {
    const auto t0 = Clock::now();
    SamplingConfig scfg = cfg.sampling;
    scfg.resolution = spec.resolution;
    scfg.threads = cfg.threads;
    const SampleResult sample = downsample(*input, scfg);
    out.peak_buffer_bytes = std::max(out.peak_buffer_bytes, sample.peak_buffer_bytes);
    if (out.blocks.empty()) out.dropped = sample.dropped;
    const PointCloud key_points = gather(*input, sample);

    const VoxelizationConfig vcfg = block_voxel_config(cfg, spec);
    PointCloud current = conv_layer(*input, key_points, vcfg, weights.layers[layer++],
                                    cfg.activation);
    // Later layers of the block reuse the same key-points.
    for (std::size_t l = 1; l < spec.layers; ++l) {
      current = conv_layer(current, current, vcfg, weights.layers[layer++], cfg.activation);
    }
    out.blocks.push_back(std::move(current));
    input = &out.blocks.back();
    out.block_seconds.push_back(seconds_since(t0));
  }
  const auto t_concat = Clock::now();

  const PointCloud& last = out.blocks.back();
  std::size_t total = 0;
  for (const auto& b : out.blocks) total += b.channels();
  std::vector<double> concat(last.size() * total, 0.0);
  std::size_t offset = 0;
  for (std::size_t b = 0; b < out.blocks.size(); ++b) {
    const std::size_t c = out.blocks[b].channels();
    const auto pulled = nearest_features(out.blocks[b], last, cfg.blocks[b].resolution);
    for (std::size_t i = 0; i < last.size(); ++i) {
      std::copy_n(pulled.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  concat.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    }
    offset += c;
  }
  out.concatenated = PointCloud(last.points(), std::move(concat), total);
  out.concat_seconds = seconds_since(t_concat);
  return out;
}

void write_kernel(std::ostream& out, const ConvKernel& kernel) {
  wire::write_magic(out, wire::kKernelMagic);
  wire::write_u64(out, kernel.resolution());
  wire::write_u64(out, kernel.in_channels());
  wire::write_u64(out, kernel.out_channels());
  wire::write_u64(out, kernel.weights().size());
  wire::write_u64(out, kernel.bias().size());
  for (const double w : kernel.weights()) wire::write_f32(out, w);
  for (const double b : kernel.bias()) wire::write_f32(out, b);
  if (!out) throw Error("write_kernel: stream failure");
}

ConvKernel read_kernel(std::istream& in) {
  wire::Reader r(in);
  r.expect_magic(wire::kKernelMagic);
  const std::uint64_t k = r.u64();
  const std::uint64_t c_in = r.u64();
  const std::uint64_t c_out = r.u64();
  const std::size_t at_counts = r.offset();
  const std::uint64_t nw = r.u64();
  const std::uint64_t nb = r.u64();
  constexpr std::uint64_t kMaxDim = 1u << 20;
  if (k == 0 || k > 64 || c_in > kMaxDim || c_out == 0 || c_out > kMaxDim ||
      nw != k * k * k * c_in * c_out || nb != c_out) {
    throw ParseError("kernel blob: inconsistent header", at_counts);
  }
  std::vector<double> weights(nw);
  for (auto& w : weights) w = r.f32();
  std::vector<double> bias(nb);
  for (auto& b : bias) b = r.f32();
  return ConvKernel(k, c_in, c_out, std::move(weights), std::move(bias));
}

}  // namespace dvdet
