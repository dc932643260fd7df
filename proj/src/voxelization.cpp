#include "dvdet/voxelization.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "dvdet/parallel.hpp"

namespace dvdet {

void VoxelizationConfig::validate() const {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw std::invalid_argument("VoxelizationConfig: radius must be positive and finite");
  }
  if (k == 0 || k % 2 == 0) {
    throw std::invalid_argument("VoxelizationConfig: kernel resolution must be positive and odd");
  }
}

AccelGrid::AccelGrid(const PointCloud& cloud, double cell_size) : cell_size_(cell_size) {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw std::invalid_argument("AccelGrid: cell size must be positive and finite");
  }
  const std::size_t n = cloud.size();
  std::vector<std::pair<CellIndex, std::uint32_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) {
    keyed[i] = {cell_of(cloud.point(i), cell_size), static_cast<std::uint32_t>(i)};
  }
  std::sort(keyed.begin(), keyed.end());
  order_.resize(n);
  ranges_.reserve(n / 2 + 1);
  for (std::size_t begin = 0; begin < n;) {
    std::size_t end = begin + 1;
    while (end < n && keyed[end].first == keyed[begin].first) ++end;
    for (std::size_t i = begin; i < end; ++i) order_[i] = keyed[i].second;
    ranges_.emplace(keyed[begin].first, std::pair{static_cast<std::uint32_t>(begin),
                                                  static_cast<std::uint32_t>(end - begin)});
    begin = end;
  }
}

std::span<const std::uint32_t> AccelGrid::cell_points(const CellIndex& c) const {
  const auto it = ranges_.find(c);
  if (it == ranges_.end()) return {};
  return {order_.data() + it->second.first, it->second.second};
}

AccelGrid build_accel_grid(const PointCloud& cloud, double cell_size) {
  return AccelGrid(cloud, cell_size);
}

std::vector<std::uint32_t> radius_neighbors(const AccelGrid& grid, const PointCloud& cloud,
                                            const Point3& center, double radius) {
  if (grid.point_count() != cloud.size()) {
    throw std::invalid_argument("radius_neighbors: grid was built over a different cloud");
  }
  if (!(radius >= 0.0)) throw std::invalid_argument("radius_neighbors: negative radius");
  std::vector<std::uint32_t> out;
  if (cloud.empty()) return out;

  // Pad the bounding cube so rounding in center +- R never hides a cell.
  const double pad = radius + 1e-9 * (1.0 + radius + std::abs(center.x()) +
                                      std::abs(center.y()) + std::abs(center.z()));
  const double cs = grid.cell_size();
  const auto lo = [&](double c) { return static_cast<std::int64_t>(std::floor((c - pad) / cs)); };
  const auto hi = [&](double c) { return static_cast<std::int64_t>(std::floor((c + pad) / cs)); };
  const double r2 = radius * radius;

  for (std::int64_t i = lo(center.x()); i <= hi(center.x()); ++i) {
    for (std::int64_t j = lo(center.y()); j <= hi(center.y()); ++j) {
      for (std::int64_t k = lo(center.z()); k <= hi(center.z()); ++k) {
        for (const std::uint32_t idx : grid.cell_points({i, j, k})) {
          if (squared_distance(cloud.point(idx), center) <= r2) out.push_back(idx);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::array<std::size_t, 3> voxel_slot(const Point3& p, const Point3& center, double radius,
                                      std::size_t k) {
  const double edge = 2.0 * radius / static_cast<double>(k);
  const auto axis = [&](double pc, double cc) {
    const double f = std::floor((pc - cc + radius) / edge);
    if (f <= 0.0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(f), k - 1);
  };
  return {axis(p.x(), center.x()), axis(p.y(), center.y()), axis(p.z(), center.z())};
}

namespace {

// Per-point contribution to the pooled channels: its features, then optional offsets.
void contribution(const PointCloud& cloud, std::uint32_t idx, const Point3& center,
                  const VoxelizationConfig& cfg, std::span<double> acc) {
  const auto f = cloud.feature(idx);
  for (std::size_t ch = 0; ch < f.size(); ++ch) acc[ch] += f[ch];
  if (cfg.append_offsets) {
    const Point3& p = cloud.point(idx);
    const std::size_t c = f.size();
    acc[c] += (p.x() - center.x()) / cfg.radius;
    acc[c + 1] += (p.y() - center.y()) / cfg.radius;
    acc[c + 2] += (p.z() - center.z()) / cfg.radius;
  }
}

std::size_t linear_slot(const std::array<std::size_t, 3>& s, std::size_t k) {
  return (s[0] * k + s[1]) * k + s[2];
}

LocalVoxelTensor voxelize_dense(const PointCloud& cloud, const Point3& center,
                                const VoxelizationConfig& cfg,
                                std::span<const std::uint32_t> neighbors) {
  const std::size_t k = cfg.k;
  const std::size_t channels = cfg.output_channels(cloud.channels());
  LocalVoxelTensor out(k, channels, center, cfg.radius);
  std::vector<std::uint32_t> counts(k * k * k, 0);
  auto data = out.data();
  for (const std::uint32_t idx : neighbors) {
    const std::size_t slot = linear_slot(voxel_slot(cloud.point(idx), center, cfg.radius, k), k);
    if (cfg.max_points_per_voxel != 0 && counts[slot] >= cfg.max_points_per_voxel) continue;
    ++counts[slot];
    contribution(cloud, idx, center, cfg, data.subspan(slot * channels, channels));
  }
  for (std::size_t slot = 0; slot < counts.size(); ++slot) {
    if (counts[slot] == 0) continue;
    const double n = static_cast<double>(counts[slot]);
    for (std::size_t ch = 0; ch < channels; ++ch) data[slot * channels + ch] /= n;
  }
  return out;
}

LocalVoxelTensor voxelize_compact(const PointCloud& cloud, const Point3& center,
                                  const VoxelizationConfig& cfg,
                                  std::span<const std::uint32_t> neighbors) {
  const std::size_t k = cfg.k;
  const std::size_t channels = cfg.output_channels(cloud.channels());
  std::vector<std::pair<std::size_t, std::uint32_t>> keyed;
  keyed.reserve(neighbors.size());
  for (const std::uint32_t idx : neighbors) {
    keyed.emplace_back(linear_slot(voxel_slot(cloud.point(idx), center, cfg.radius, k), k), idx);
  }
  std::sort(keyed.begin(), keyed.end());

  LocalVoxelTensor out(k, channels, center, cfg.radius);
  auto data = out.data();
  std::vector<double> acc(channels);
  for (std::size_t begin = 0; begin < keyed.size();) {
    std::size_t end = begin + 1;
    while (end < keyed.size() && keyed[end].first == keyed[begin].first) ++end;
    std::size_t used = end - begin;
    if (cfg.max_points_per_voxel != 0) used = std::min(used, cfg.max_points_per_voxel);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = begin; i < begin + used; ++i) {
      contribution(cloud, keyed[i].second, center, cfg, acc);
    }
    const std::size_t slot = keyed[begin].first;
    const double n = static_cast<double>(used);
    for (std::size_t ch = 0; ch < channels; ++ch) data[slot * channels + ch] = acc[ch] / n;
    begin = end;
  }
  return out;
}

}  // namespace

LocalVoxelTensor voxelize(const PointCloud& cloud, const Point3& center,
                          const VoxelizationConfig& cfg, const AccelGrid& grid) {
  cfg.validate();
  const auto neighbors = radius_neighbors(grid, cloud, center, cfg.radius);
  return cfg.profile == VoxelizeProfile::Dense ? voxelize_dense(cloud, center, cfg, neighbors)
                                               : voxelize_compact(cloud, center, cfg, neighbors);
}

std::vector<LocalVoxelTensor> voxelize_batch(const PointCloud& cloud,
                                             std::span<const Point3> centers,
                                             const VoxelizationConfig& cfg) {
  cfg.validate();
  std::vector<LocalVoxelTensor> out;
  if (centers.empty()) return out;
  const AccelGrid grid(cloud, cfg.voxel_edge());
  std::vector<std::optional<LocalVoxelTensor>> slots(centers.size());
  parallel_for(centers.size(), cfg.threads,
               [&](std::size_t i) { slots[i].emplace(voxelize(cloud, centers[i], cfg, grid)); });
  out.reserve(centers.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace dvdet
