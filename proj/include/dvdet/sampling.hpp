#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dvdet/core.hpp"

namespace dvdet {

/// The requested grid buffer would exceed the configured slot cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

enum class SamplingStrategy {
  GridBuffer,  ///< write-once dense slot buffer, O(n), inference profile
  SortUnique,  ///< sort by cell then pick one per run, O(n log n), training profile
};

/// Axis-aligned admissible region [min, min + size) per axis. Its minimum corner is the lattice origin.
struct Extents {
  Point3 min;
  double size_x = 0.0;
  double size_y = 0.0;
  double size_z = 0.0;

  bool contains(const Point3& p) const;
};

struct SamplingConfig {
  double resolution = 0.1;
  std::optional<Extents> extents;
  SamplingStrategy strategy = SamplingStrategy::GridBuffer;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::uint64_t max_buffer_slots = std::uint64_t{1} << 31;
  unsigned threads = 1;
};

struct SampleResult {
  std::vector<std::uint32_t> indices;
  std::vector<CellIndex> occupied_cells;
  /// Points rejected because they fell outside the extents.
  std::size_t dropped = 0;
  std::uint64_t buffer_slots = 0;
  std::uint64_t peak_buffer_bytes = 0;
};

struct GridBufferPlan {
  std::int64_t nx = 0;
  std::int64_t ny = 0;
  std::int64_t nz = 0;
  std::uint64_t slots() const {
    return static_cast<std::uint64_t>(nx) * static_cast<std::uint64_t>(ny) *
           static_cast<std::uint64_t>(nz);
  }
  /// One 4-byte point index per slot.
  std::uint64_t bytes() const { return slots() * sizeof(std::uint32_t); }
};

/// Slot dimensions floor(W/r) x floor(L/r) x floor(H/r), rounded up when W/r is not integral.
GridBufferPlan plan_grid_buffer(const Extents& extents, double resolution);

/// Lattice cell of p relative to the configured origin.
CellIndex sampling_cell(const Point3& p, const SamplingConfig& cfg);

SampleResult downsample_grid_buffer(const PointCloud& cloud, const SamplingConfig& cfg);
SampleResult downsample_sort_unique(const PointCloud& cloud, const SamplingConfig& cfg);
/// Dispatches on cfg.strategy.
SampleResult downsample(const PointCloud& cloud, const SamplingConfig& cfg);

/// Copies the selected points with their features, in result order.
PointCloud gather(const PointCloud& cloud, const SampleResult& result);

}  // namespace dvdet
