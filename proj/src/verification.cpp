#include "dvdet/verification.hpp"

#include <algorithm>
#include <cmath>

#include "dvdet/parallel.hpp"
#include "dvdet/random.hpp"

namespace dvdet {

namespace {

struct Aabb {
  double lo[3];
  double hi[3];
  double volume() const { return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]); }
};

Aabb joint_bounds(const OrientedBox& a, const OrientedBox& b, bool with_z) {
  Aabb box{{1e300, 1e300, 0.0}, {-1e300, -1e300, 1.0}};
  for (const OrientedBox* ob : {&a, &b}) {
    for (const Vec2& c : box_corners_bev(*ob)) {
      box.lo[0] = std::min(box.lo[0], c.x);
      box.lo[1] = std::min(box.lo[1], c.y);
      box.hi[0] = std::max(box.hi[0], c.x);
      box.hi[1] = std::max(box.hi[1], c.y);
    }
  }
  if (with_z) {
    box.lo[2] = std::min(a.z() - 0.5 * a.h(), b.z() - 0.5 * b.h());
    box.hi[2] = std::max(a.z() + 0.5 * a.h(), b.z() + 0.5 * b.h());
  }
  return box;
}

// Membership test written directly from the box definition.
struct BoxTest {
  explicit BoxTest(const OrientedBox& b)
      : cx(b.x()), cy(b.y()), cz(b.z()), c(std::cos(b.r())), s(std::sin(b.r())),
        hw(0.5 * b.w()), hl(0.5 * b.l()), hh(0.5 * b.h()) {}

  bool bev(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    return std::abs(c * dx + s * dy) <= hw && std::abs(-s * dx + c * dy) <= hl;
  }
  bool contains(double x, double y, double z) const {
    return std::abs(z - cz) <= hh && bev(x, y);
  }

  double cx, cy, cz, c, s, hw, hl, hh;
};

struct Tally {
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  std::uint64_t both = 0;
  std::uint64_t total = 0;
};

// Draws `count` points in the bounds for one replicate, stratified or not, and tallies membership.
template <typename Inside>
Tally sample_replicate(const Aabb& bounds, std::uint64_t seed, std::uint64_t replicate,
                       std::uint64_t count, bool stratified, int dims, Inside&& inside) {
  Tally t;
  const std::uint64_t key = hash_combine(seed, replicate);
  std::uint64_t strata = 1;
  if (stratified) {
    strata = static_cast<std::uint64_t>(std::floor(std::pow(static_cast<double>(count), 1.0 / dims)));
    strata = std::max<std::uint64_t>(strata, 1);
    count = 1;
    for (int d = 0; d < dims; ++d) count *= strata;
  }
  const double m = static_cast<double>(strata);
  double u[3] = {0.5, 0.5, 0.5};
  for (std::uint64_t s = 0; s < count; ++s) {
    std::uint64_t cell = s;
    for (int d = 0; d < dims; ++d) {
      const double jitter = unit_double(splitmix64(key ^ splitmix64(s * 3 + d)));
      if (stratified) {
        const double stratum = static_cast<double>(cell % strata);
        cell /= strata;
        u[d] = (stratum + jitter) / m;
      } else {
        u[d] = jitter;
      }
    }
    const double x = bounds.lo[0] + u[0] * (bounds.hi[0] - bounds.lo[0]);
    const double y = bounds.lo[1] + u[1] * (bounds.hi[1] - bounds.lo[1]);
    const double z = bounds.lo[2] + u[2] * (bounds.hi[2] - bounds.lo[2]);
    const auto [ia, ib] = inside(x, y, z);
    t.a += ia;
    t.b += ib;
    t.both += (ia && ib);
  }
  t.total = count;
  return t;
}

constexpr std::uint64_t kReplicates = 8;

struct Estimate {
  McEstimate est;
  Tally sum;
};

template <typename Inside, typename Ratio>
Estimate run_estimate(const Aabb& bounds, const OracleConfig& cfg, int dims, Inside&& inside,
                        Ratio&& ratio) {
  const std::uint64_t reps = cfg.stratified ? kReplicates : 1;
  std::vector<Tally> tallies(reps);
  parallel_for(reps, cfg.threads, [&](std::size_t r) {
    tallies[r] = sample_replicate(bounds, cfg.seed, r, cfg.samples / reps, cfg.stratified, dims,
                                  inside);
  });
  Tally sum;
  for (const Tally& t : tallies) {
    sum.a += t.a;
    sum.b += t.b;
    sum.both += t.both;
    sum.total += t.total;
  }
  McEstimate est;
  est.samples = sum.total;
  est.value = ratio(sum);
  if (cfg.stratified) {
    double mean = 0.0;
    for (const Tally& t : tallies) mean += ratio(t);
    mean /= static_cast<double>(reps);
    double var = 0.0;
    for (const Tally& t : tallies) var += (ratio(t) - mean) * (ratio(t) - mean);
    var /= static_cast<double>(reps - 1);
    est.std_error = std::sqrt(var / static_cast<double>(reps));
  }
  return {est, sum};
}

}  // namespace

McEstimate mc_iou3d(const OrientedBox& bp, const OrientedBox& bg, const OracleConfig& cfg) {
  const Aabb bounds = joint_bounds(bp, bg, true);
  const BoxTest ta(bp);
  const BoxTest tb(bg);
  const auto inside = [&](double x, double y, double z) {
    return std::pair<bool, bool>{ta.contains(x, y, z), tb.contains(x, y, z)};
  };
  const auto ratio = [](const Tally& t) {
    const std::uint64_t uni = t.a + t.b - t.both;
    return uni == 0 ? 0.0 : static_cast<double>(t.both) / static_cast<double>(uni);
  };
  auto [est, sum] = run_estimate(bounds, cfg, 3, inside, ratio);
  if (!cfg.stratified) {
    // Conditional binomial error of the hit fraction among union samples.
    const std::uint64_t uni = sum.a + sum.b - sum.both;
    est.std_error = uni == 0 ? 0.0
                             : std::sqrt(est.value * (1.0 - est.value) / static_cast<double>(uni));
  }
  return est;
}

McEstimate mc_bev_intersection_area(const OrientedBox& bp, const OrientedBox& bg,
                                    const OracleConfig& cfg) {
  const Aabb bounds = joint_bounds(bp, bg, false);
  const double area = (bounds.hi[0] - bounds.lo[0]) * (bounds.hi[1] - bounds.lo[1]);
  const BoxTest ta(bp);
  const BoxTest tb(bg);
  const auto inside = [&](double x, double y, double) {
    return std::pair<bool, bool>{ta.bev(x, y), tb.bev(x, y)};
  };
  const auto ratio = [area](const Tally& t) {
    return t.total == 0 ? 0.0
                        : area * static_cast<double>(t.both) / static_cast<double>(t.total);
  };
  McEstimate est = run_estimate(bounds, cfg, 2, inside, ratio).est;
  if (!cfg.stratified) {
    const double f = est.value / area;
    est.std_error = area * std::sqrt(f * (1.0 - f) / static_cast<double>(est.samples));
  }
  return est;
}

std::vector<Vec2> clip_polygons(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> output(subject.begin(), subject.end());
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !output.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % m];
    // > 0 means left of a->b, i.e. inside for a counterclockwise clip polygon.
    const auto side = [&](const Vec2& p) {
      return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    std::vector<Vec2> input;
    input.swap(output);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Vec2 cur = input[i];
      const Vec2 prev = input[(i + input.size() - 1) % input.size()];
      const double sc = side(cur);
      const double sp = side(prev);
      if (sc >= 0.0) {
        if (sp < 0.0) {
          const double t = sp / (sp - sc);
          output.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
        }
        output.push_back(cur);
      } else if (sp >= 0.0) {
        const double t = sp / (sp - sc);
        output.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
      }
    }
  }
  return output;
}

std::vector<std::uint32_t> brute_neighbors(const PointCloud& cloud, const Point3& center,
                                           double radius) {
  std::vector<std::uint32_t> out;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.point(i);
    const double dx = p.x() - center.x();
    const double dy = p.y() - center.y();
    const double dz = p.z() - center.z();
    if (dx * dx + dy * dy + dz * dz <= r2) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

LocalVoxelTensor brute_voxelize(const PointCloud& cloud, const Point3& center,
                                const VoxelizationConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.k;
  const std::size_t c = cloud.channels();
  const std::size_t oc = cfg.output_channels(c);
  const double edge = 2.0 * cfg.radius / static_cast<double>(k);
  LocalVoxelTensor out(k, oc, center, cfg.radius);
  std::vector<std::size_t> count(k * k * k, 0);
  std::vector<double> sum(k * k * k * oc, 0.0);
  const auto index = [&](double offset) {
    const double f = std::floor((offset + cfg.radius) / edge);
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(k - 1)));
  };
  for (const std::uint32_t i : brute_neighbors(cloud, center, cfg.radius)) {
    const Point3& p = cloud.point(i);
    const std::size_t ix = index(p.x() - center.x());
    const std::size_t iy = index(p.y() - center.y());
    const std::size_t iz = index(p.z() - center.z());
    const std::size_t v = (ix * k + iy) * k + iz;
    if (cfg.max_points_per_voxel != 0 && count[v] >= cfg.max_points_per_voxel) continue;
    ++count[v];
    const auto f = cloud.feature(i);
    for (std::size_t ch = 0; ch < c; ++ch) sum[v * oc + ch] += f[ch];
    if (cfg.append_offsets) {
      sum[v * oc + c] += (p.x() - center.x()) / cfg.radius;
      sum[v * oc + c + 1] += (p.y() - center.y()) / cfg.radius;
      sum[v * oc + c + 2] += (p.z() - center.z()) / cfg.radius;
    }
  }
  auto data = out.data();
  for (std::size_t v = 0; v < count.size(); ++v) {
    if (count[v] == 0) continue;
    for (std::size_t ch = 0; ch < oc; ++ch) {
      data[v * oc + ch] = sum[v * oc + ch] / static_cast<double>(count[v]);
    }
  }
  return out;
}

std::vector<double> finite_diff(const ScalarFunction& f, std::span<const double> x, double h) {
  std::vector<double> grad(x.size());
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace dvdet
