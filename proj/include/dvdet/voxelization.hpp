#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "dvdet/core.hpp"

namespace dvdet {

enum class VoxelizeProfile {
  Compact,  ///< sorts each neighbor list by voxel; no dense scratch (training profile)
  Dense,    ///< scatters into a reusable dense accumulator (inference profile)
};

struct VoxelizationConfig {
  double radius = 0.15;
  /// Voxels per axis; positive and odd so the key-point sits in the central voxel.
  std::size_t k = 3;
  /// 0 means unlimited; otherwise the lowest-index points of a voxel are kept.
  std::size_t max_points_per_voxel = 0;
  /// Appends the mean relative offset (p - center) / radius as three extra channels.
  bool append_offsets = false;
  VoxelizeProfile profile = VoxelizeProfile::Dense;
  unsigned threads = 1;

  double voxel_edge() const { return 2.0 * radius / static_cast<double>(k); }
  std::size_t output_channels(std::size_t input_channels) const {
    return input_channels + (append_offsets ? 3 : 0);
  }
  void validate() const;
};

/// Partition of point indices by lattice cell, used to restrict radius queries.
class AccelGrid {
 public:
  AccelGrid(const PointCloud& cloud, double cell_size);

  double cell_size() const { return cell_size_; }
  std::size_t point_count() const { return order_.size(); }
  std::size_t occupied_cells() const { return ranges_.size(); }

  /// Indices in the cell, ascending; empty if unoccupied.
  std::span<const std::uint32_t> cell_points(const CellIndex& c) const;

  template <typename Fn>
  void for_each_cell(Fn&& fn) const {
    for (const auto& [cell, range] : ranges_) {
      fn(cell, std::span<const std::uint32_t>(order_.data() + range.first, range.second));
    }
  }

 private:
  double cell_size_;
  std::vector<std::uint32_t> order_;
  std::unordered_map<CellIndex, std::pair<std::uint32_t, std::uint32_t>, CellIndexHash> ranges_;
};

AccelGrid build_accel_grid(const PointCloud& cloud, double cell_size);

/// Indices with |p - center| <= radius, ascending. Visits only cells overlapping the ball's bounding cube.
std::vector<std::uint32_t> radius_neighbors(const AccelGrid& grid, const PointCloud& cloud,
                                            const Point3& center, double radius);

/// Voxel slot of a neighbor: floor((p - center + R) / (2R/k)) clamped to [0, k-1].
std::array<std::size_t, 3> voxel_slot(const Point3& p, const Point3& center, double radius,
                                      std::size_t k);

/// Average-pooled k*k*k local tensor around center. `grid` must be built over `cloud`.
LocalVoxelTensor voxelize(const PointCloud& cloud, const Point3& center,
                          const VoxelizationConfig& cfg, const AccelGrid& grid);

/// One tensor per center, in center order. Builds the grid once at cell size 2R/k.
std::vector<LocalVoxelTensor> voxelize_batch(const PointCloud& cloud,
                                             std::span<const Point3> centers,
                                             const VoxelizationConfig& cfg);

}  // namespace dvdet
