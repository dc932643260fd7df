#include "dvdet/roipool.hpp"

#include <algorithm>
#include <cmath>

#include "dvdet/random.hpp"

namespace dvdet {

void RoiPoolConfig::validate() const {
  if (k == 0) throw std::invalid_argument("RoiPoolConfig: k must be positive");
  if (n_max == 0) throw std::invalid_argument("RoiPoolConfig: n_max must be at least 1");
}

Point3 to_box_frame(const Point3& p, const OrientedBox& box) {
  const double c = std::cos(box.r());
  const double s = std::sin(box.r());
  const double dx = p.x() - box.x();
  const double dy = p.y() - box.y();
  return {c * dx + s * dy, -s * dx + c * dy, p.z() - box.z()};
}

namespace {

bool inside_local(const Point3& q, const OrientedBox& box) {
  return std::abs(q.x()) <= 0.5 * box.w() && std::abs(q.y()) <= 0.5 * box.l() &&
         std::abs(q.z()) <= 0.5 * box.h();
}

std::size_t cell_along(double q, double extent, std::size_t k) {
  const double f = std::floor((q + 0.5 * extent) / (extent / static_cast<double>(k)));
  if (f <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(f), k - 1);
}

double cell_center(std::size_t i, double extent, std::size_t k) {
  return -0.5 * extent + (static_cast<double>(i) + 0.5) * extent / static_cast<double>(k);
}

}  // namespace

std::vector<std::uint32_t> points_in_box(const PointCloud& cloud, const OrientedBox& box) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (inside_local(to_box_frame(cloud.point(i), box), box)) {
      out.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return out;
}

double la_weight(double d, double r) { return std::exp(1.0 - d / r); }

PooledRoi la_pool(const PointCloud& cloud, const OrientedBox& box, const RoiPoolConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.k;
  const std::size_t c = cloud.channels();
  PooledRoi out{k, c, std::vector<double>(k * k * k * c, 0.0), box};
  std::vector<std::size_t> used(k * k * k, 0);
  const double r = std::max({box.w(), box.l(), box.h()}) / static_cast<double>(k);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3 q = to_box_frame(cloud.point(i), box);
    if (!inside_local(q, box)) continue;
    const std::size_t ix = cell_along(q.x(), box.w(), k);
    const std::size_t iy = cell_along(q.y(), box.l(), k);
    const std::size_t iz = cell_along(q.z(), box.h(), k);
    const std::size_t cell = (ix * k + iy) * k + iz;
    if (used[cell] >= cfg.n_max) continue;
    ++used[cell];
    const double dx = q.x() - cell_center(ix, box.w(), k);
    const double dy = q.y() - cell_center(iy, box.l(), k);
    const double dz = q.z() - cell_center(iz, box.h(), k);
    const double weight = la_weight(std::sqrt(dx * dx + dy * dy + dz * dz), r);
    const auto f = cloud.feature(i);
    double* dst = out.grid.data() + cell * c;
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += weight * f[ch];
  }
  for (std::size_t cell = 0; cell < used.size(); ++cell) {
    if (used[cell] == 0) continue;
    const double n = static_cast<double>(used[cell]);
    for (std::size_t ch = 0; ch < c; ++ch) out.grid[cell * c + ch] /= n;
  }
  return out;
}

RefineHeadWeights init_refine_head(std::size_t in_channels, std::uint64_t seed,
                                   std::size_t conv1_channels, std::size_t conv2_channels,
                                   std::size_t hidden) {
  Rng rng(seed);
  ConvKernel conv1 = glorot_kernel(3, in_channels, conv1_channels, rng);
  ConvKernel conv2 = glorot_kernel(3, conv1_channels, conv2_channels, rng);
  ConvKernel fc1 = glorot_kernel(1, conv2_channels, hidden, rng);
  ConvKernel fc2 = glorot_kernel(1, hidden, kRefineOutputs, rng);
  return {std::move(conv1), std::move(conv2), std::move(fc1), std::move(fc2)};
}

std::vector<double> conv3d_valid(std::span<const double> input, std::size_t g,
                                 const ConvKernel& kernel, Activation act) {
  const std::size_t k = kernel.resolution();
  const std::size_t c_in = kernel.in_channels();
  const std::size_t c_out = kernel.out_channels();
  if (input.size() != g * g * g * c_in) {
    throw ShapeError("conv3d_valid: input is not a g^3 x c_in grid for this kernel");
  }
  if (g < k) throw ShapeError("conv3d_valid: grid smaller than kernel");
  const std::size_t og = g - k + 1;
  std::vector<double> out(og * og * og * c_out);
  const auto w = kernel.weights();
  const auto b = kernel.bias();
  for (std::size_t x = 0; x < og; ++x) {
    for (std::size_t y = 0; y < og; ++y) {
      for (std::size_t z = 0; z < og; ++z) {
        double* dst = out.data() + ((x * og + y) * og + z) * c_out;
        std::copy(b.begin(), b.end(), dst);
        for (std::size_t dx = 0; dx < k; ++dx) {
          for (std::size_t dy = 0; dy < k; ++dy) {
            for (std::size_t dz = 0; dz < k; ++dz) {
              const double* src = input.data() + (((x + dx) * g + (y + dy)) * g + (z + dz)) * c_in;
              const double* wrow = w.data() + ((dx * k + dy) * k + dz) * c_in * c_out;
              for (std::size_t ci = 0; ci < c_in; ++ci) {
                const double v = src[ci];
                if (v == 0.0) continue;
                for (std::size_t co = 0; co < c_out; ++co) dst[co] += v * wrow[ci * c_out + co];
              }
            }
          }
        }
        if (act == Activation::ReLU) {
          for (std::size_t co = 0; co < c_out; ++co) dst[co] = std::max(dst[co], 0.0);
        }
      }
    }
  }
  return out;
}

RefineOutput refine_head(const PooledRoi& roi, const RefineHeadWeights& weights, Activation act) {
  const auto& [conv1, conv2, fc1, fc2] = weights;
  if (roi.grid.size() != roi.k * roi.k * roi.k * roi.channels) {
    throw ShapeError("refine_head: pooled grid size is inconsistent");
  }
  if (roi.channels != conv1.in_channels() || conv1.out_channels() != conv2.in_channels() ||
      conv2.out_channels() != fc1.in_channels() || fc1.out_channels() != fc2.in_channels() ||
      fc1.resolution() != 1 || fc2.resolution() != 1 || fc2.out_channels() != kRefineOutputs) {
    throw ShapeError("refine_head: channel counts do not line up");
  }
  if (roi.k < conv1.resolution() || roi.k - conv1.resolution() + 1 < conv2.resolution() ||
      roi.k - conv1.resolution() - conv2.resolution() + 2 != 1) {
    throw ShapeError("refine_head: grid of edge " + std::to_string(roi.k) +
                     " does not reduce to 1x1x1 with valid padding");
  }

  RefineOutput out;
  out.spatial_trace.push_back(roi.k);
  const auto h1 = conv3d_valid(roi.grid, roi.k, conv1, act);
  const std::size_t g1 = roi.k - conv1.resolution() + 1;
  out.spatial_trace.push_back(g1);
  const auto h2 = conv3d_valid(h1, g1, conv2, act);
  out.spatial_trace.push_back(g1 - conv2.resolution() + 1);

  const auto h3 = dense(h2, fc1, act);
  const auto y = dense(h3, fc2, Activation::Identity);
  out.confidence_logit = y[0];
  std::copy(y.begin() + 1, y.begin() + 8, out.residuals.begin());
  out.flip_logit = y[8];
  return out;
}

}  // namespace dvdet
