#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dvdet/core.hpp"
#include "dvdet/pointconv.hpp"

namespace dvdet {

struct RoiPoolConfig {
  /// Pooling cells per axis.
  std::size_t k = 5;
  /// At most this many points feed one cell; the rest are omitted, lowest index first kept.
  std::size_t n_max = 5;

  void validate() const;
};

/// k*k*k*C grid in the box frame, layout ((ix*k + iy)*k + iz)*C + ch, ix along w.
struct PooledRoi {
  std::size_t k = 0;
  std::size_t channels = 0;
  std::vector<double> grid;
  OrientedBox box;

  std::span<const double> cell(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return {grid.data() + ((ix * k + iy) * k + iz) * channels, channels};
  }
};

/// Coordinates of p in the box frame: rotate (p - center) by -r about z.
Point3 to_box_frame(const Point3& p, const OrientedBox& box);

/// Indices (ascending) of points inside the box, boundary inclusive.
std::vector<std::uint32_t> points_in_box(const PointCloud& cloud, const OrientedBox& box);

/// Pooling weight exp(1 - d / r): e at a cell center, 1 at distance r.
double la_weight(double d, double r);

/// Location-aware pooling: f_g = (1/n) sum w_i f_i, w_i = exp(1 - d_i / r),
/// d_i = distance to the cell center, r = max(w, l, h) / k.
PooledRoi la_pool(const PointCloud& cloud, const OrientedBox& box, const RoiPoolConfig& cfg);

/// Second-stage head: two 3x3x3 valid convolutions then a two-layer perceptron.
struct RefineHeadWeights {
  ConvKernel conv1;
  ConvKernel conv2;
  ConvKernel fc1;
  /// Outputs: confidence logit, 7 box residuals, flip logit.
  ConvKernel fc2;
};

inline constexpr std::size_t kRefineOutputs = 9;

RefineHeadWeights init_refine_head(std::size_t in_channels, std::uint64_t seed,
                                   std::size_t conv1_channels = 64,
                                   std::size_t conv2_channels = 128,
                                   std::size_t hidden = 64);

struct RefineOutput {
  double confidence_logit = 0.0;
  std::array<double, 7> residuals{};
  double flip_logit = 0.0;
  /// Spatial edge length before and after each convolution, e.g. {5, 3, 1}.
  std::vector<std::size_t> spatial_trace;
};

/// Dense 3D convolution with valid padding over a g*g*g*c_in grid. Returns the (g-k+1)^3 grid.
std::vector<double> conv3d_valid(std::span<const double> input, std::size_t g,
                                 const ConvKernel& kernel, Activation act);

/// Throws ShapeError unless the pooled grid shrinks to 1x1x1 through both convolutions
/// and every channel count lines up.
RefineOutput refine_head(const PooledRoi& roi, const RefineHeadWeights& weights,
                         Activation act = Activation::ReLU);

}  // namespace dvdet
