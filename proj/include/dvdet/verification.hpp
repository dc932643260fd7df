#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dvdet/core.hpp"
#include "dvdet/voxelization.hpp"

namespace dvdet {

struct OracleConfig {
  std::uint64_t samples = 1'000'000;
  std::uint64_t seed = 0;
  double fd_step = 1e-5;
  /// Jittered stratified sampling over independent replicates; false gives plain i.i.d. sampling.
  bool stratified = true;
  unsigned threads = 1;
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t samples = 0;
};

/// Rejection-sampling estimate of IoU over the pair's joint bounding volume.
McEstimate mc_iou3d(const OrientedBox& bp, const OrientedBox& bg, const OracleConfig& cfg = {});

/// Estimate of the BEV footprint intersection area.
McEstimate mc_bev_intersection_area(const OrientedBox& bp, const OrientedBox& bg,
                                    const OracleConfig& cfg = {});

/// Sutherland-Hodgman clip of convex polygon `subject` by convex polygon `clip`,
/// both counterclockwise. Returns the intersection, counterclockwise.
std::vector<Vec2> clip_polygons(std::span<const Vec2> subject, std::span<const Vec2> clip);

/// Exhaustive |p - center| <= radius scan, ascending indices.
std::vector<std::uint32_t> brute_neighbors(const PointCloud& cloud, const Point3& center,
                                           double radius);

/// Voxelization without any acceleration structure.
LocalVoxelTensor brute_voxelize(const PointCloud& cloud, const Point3& center,
                                const VoxelizationConfig& cfg);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff(const ScalarFunction& f, std::span<const double> x, double h);

}  // namespace dvdet
