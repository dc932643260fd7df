#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "dvdet/core.hpp"

namespace dvdet {

struct IouResult {
  double iou3d = 0.0;
  double loss = 1.0;
  double bev_area = 0.0;
  double height_overlap = 0.0;
  /// Intersection vertices in the second box's frame, counterclockwise.
  std::vector<Vec2> polygon;
  /// False when a candidate point sits within 1e-6 of a filtering, merge, or height tie.
  bool smooth = true;
};

struct IouGradient {
  double iou3d = 0.0;
  double loss = 1.0;
  /// d loss / d (x, y, z, w, l, h, r) of the first box, then of the second box.
  std::array<double, 14> grad{};
  bool smooth = true;
};

/// Maps points from src-box local coordinates into dst-box local coordinates.
std::vector<Vec2> to_frame(std::span<const Vec2> points, const OrientedBox& src,
                           const OrientedBox& dst);

/// Convex BEV intersection of the two boxes in the frame of `bg`, counterclockwise.
/// Empty when the footprints do not overlap.
std::vector<Vec2> bev_intersection_polygon(const OrientedBox& bp, const OrientedBox& bg);

/// Shoelace area of an ordered polygon; fewer than 3 vertices gives 0.
double shoelace_area(std::span<const Vec2> vertices);

IouResult iou3d(const OrientedBox& bp, const OrientedBox& bg);

/// Loss 1 - IoU and its gradient by forward-mode differentiation along the path selected by
/// the primal values.
IouGradient iou3d_grad(const OrientedBox& bp, const OrientedBox& bg);

using BoxPair = std::pair<OrientedBox, OrientedBox>;

std::vector<IouResult> iou3d_batch(std::span<const BoxPair> pairs, unsigned threads = 1);
std::vector<IouGradient> iou3d_grad_batch(std::span<const BoxPair> pairs, unsigned threads = 1);

}  // namespace dvdet
