#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvdet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or kernel shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or stream; offset is the byte position of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Finite 3D coordinate in meters.
class Point3 {
 public:
  constexpr Point3() = default;
  Point3(double x, double y, double z) : x_(x), y_(y), z_(z) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      throw std::invalid_argument("Point3: non-finite coordinate");
    }
  }

  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  Point3 operator+(const Point3& o) const { return {x_ + o.x_, y_ + o.y_, z_ + o.z_}; }
  Point3 operator-(const Point3& o) const { return {x_ - o.x_, y_ - o.y_, z_ - o.z_}; }
  Point3 operator*(double s) const { return {x_ * s, y_ * s, z_ * s}; }

  double squared_norm() const { return x_ * x_ + y_ * y_ + z_ * z_; }
  double norm() const { return std::sqrt(squared_norm()); }

  friend bool operator==(const Point3&, const Point3&) = default;

 private:
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

double squared_distance(const Point3& a, const Point3& b);

/// Points with one equally sized feature vector each, stored row-major.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::size_t channels) : channels_(channels) {}
  /// Throws std::invalid_argument unless features.size() == points.size() * channels.
  PointCloud(std::vector<Point3> points, std::vector<double> features, std::size_t channels);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  std::size_t channels() const { return channels_; }

  const Point3& point(std::size_t i) const { return points_[i]; }
  std::span<const double> feature(std::size_t i) const {
    return {features_.data() + i * channels_, channels_};
  }

  const std::vector<Point3>& points() const { return points_; }
  const std::vector<double>& features() const { return features_; }

  /// Appends one point; feature length must equal channels().
  void push_back(const Point3& p, std::span<const double> feature);
  void reserve(std::size_t n);

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Point3> points_;
  std::vector<double> features_;
  std::size_t channels_ = 0;
};

/// Integer lattice coordinate.
struct CellIndex {
  std::int64_t i = 0;
  std::int64_t j = 0;
  std::int64_t k = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
  CellIndex operator+(const CellIndex& o) const { return {i + o.i, j + o.j, k + o.k}; }
};

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(c.i) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(c.j) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(c.k) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Componentwise floor(p / r). Throws std::invalid_argument for r <= 0.
CellIndex cell_of(const Point3& p, double r);

/// Dense k*k*k*c tensor anchored at a key-point. Layout: ((ix*k + iy)*k + iz)*c + ch.
class LocalVoxelTensor {
 public:
  LocalVoxelTensor(std::size_t k, std::size_t channels, Point3 anchor, double radius);

  std::size_t resolution() const { return k_; }
  std::size_t channels() const { return channels_; }
  const Point3& anchor() const { return anchor_; }
  double radius() const { return radius_; }

  std::size_t offset(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return ((ix * k_ + iy) * k_ + iz) * channels_;
  }
  std::span<const double> voxel(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return {data_.data() + offset(ix, iy, iz), channels_};
  }
  std::span<double> voxel(std::size_t ix, std::size_t iy, std::size_t iz) {
    return {data_.data() + offset(ix, iy, iz), channels_};
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  friend bool operator==(const LocalVoxelTensor&, const LocalVoxelTensor&) = default;

 private:
  std::size_t k_;
  std::size_t channels_;
  Point3 anchor_;
  double radius_;
  std::vector<double> data_;
};

/// Yaw-rotated 3D box. w spans local x, l spans local y, h spans z.
class OrientedBox {
 public:
  OrientedBox(double x, double y, double z, double w, double l, double h, double r);
  /// Order: x, y, z, w, l, h, r.
  explicit OrientedBox(const std::array<double, 7>& p)
      : OrientedBox(p[0], p[1], p[2], p[3], p[4], p[5], p[6]) {}

  double x() const { return p_[0]; }
  double y() const { return p_[1]; }
  double z() const { return p_[2]; }
  double w() const { return p_[3]; }
  double l() const { return p_[4]; }
  double h() const { return p_[5]; }
  double r() const { return p_[6]; }

  Point3 center() const { return {p_[0], p_[1], p_[2]}; }
  double volume() const { return p_[3] * p_[4] * p_[5]; }
  const std::array<double, 7>& params() const { return p_; }

  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;

 private:
  std::array<double, 7> p_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// BEV corners in world coordinates, counterclockwise from the local (-w/2, +l/2) corner.
std::array<Vec2, 4> box_corners_bev(const OrientedBox& b);

}  // namespace dvdet
