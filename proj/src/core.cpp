#include "dvdet/core.hpp"

#include <algorithm>

namespace dvdet {

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

PointCloud::PointCloud(std::vector<Point3> points, std::vector<double> features,
                       std::size_t channels)
    : points_(std::move(points)), features_(std::move(features)), channels_(channels) {
  if (features_.size() != points_.size() * channels_) {
    throw std::invalid_argument("PointCloud: feature count does not match points * channels");
  }
}

void PointCloud::push_back(const Point3& p, std::span<const double> feature) {
  if (feature.size() != channels_) {
    throw std::invalid_argument("PointCloud: feature length does not match channel count");
  }
  points_.push_back(p);
  features_.insert(features_.end(), feature.begin(), feature.end());
}

void PointCloud::reserve(std::size_t n) {
  points_.reserve(n);
  features_.reserve(n * channels_);
}

CellIndex cell_of(const Point3& p, double r) {
  if (!(r > 0.0)) {
    throw std::invalid_argument("cell_of: resolution must be positive");
  }
  return {static_cast<std::int64_t>(std::floor(p.x() / r)),
          static_cast<std::int64_t>(std::floor(p.y() / r)),
          static_cast<std::int64_t>(std::floor(p.z() / r))};
}

LocalVoxelTensor::LocalVoxelTensor(std::size_t k, std::size_t channels, Point3 anchor,
                                   double radius)
    : k_(k), channels_(channels), anchor_(anchor), radius_(radius),
      data_(k * k * k * channels, 0.0) {
  if (k == 0) throw std::invalid_argument("LocalVoxelTensor: resolution must be positive");
  if (!(radius > 0.0)) throw std::invalid_argument("LocalVoxelTensor: radius must be positive");
}

OrientedBox::OrientedBox(double x, double y, double z, double w, double l, double h, double r)
    : p_{x, y, z, w, l, h, r} {
  if (!std::all_of(p_.begin(), p_.end(), [](double v) { return std::isfinite(v); })) {
    throw std::invalid_argument("OrientedBox: non-finite parameter");
  }
  if (!(w > 0.0 && l > 0.0 && h > 0.0)) {
    throw std::invalid_argument("OrientedBox: extents must be strictly positive");
  }
}

std::array<Vec2, 4> box_corners_bev(const OrientedBox& b) {
  const double c = std::cos(b.r());
  const double s = std::sin(b.r());
  const double hw = 0.5 * b.w();
  const double hl = 0.5 * b.l();
  const std::array<Vec2, 4> local{{{-hw, hl}, {-hw, -hl}, {hw, -hl}, {hw, hl}}};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.x() + c * local[i].x - s * local[i].y, b.y() + s * local[i].x + c * local[i].y};
  }
  return out;
}

}  // namespace dvdet
