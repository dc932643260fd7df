#include "dvdet/suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dvdet/iou.hpp"
#include "dvdet/losses.hpp"
#include "dvdet/parallel.hpp"
#include "dvdet/pipeline.hpp"
#include "dvdet/roipool.hpp"
#include "dvdet/sampling.hpp"
#include "dvdet/verification.hpp"
#include "dvdet/voxelization.hpp"

namespace dvdet {

namespace {

using Clock = std::chrono::steady_clock;

std::size_t scaled(std::size_t full, const SuiteConfig& cfg) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(full * cfg.scale)));
}

// Runs body, fills in name and wall time, and converts escaped exceptions into failures.
template <typename Body>
Check timed(std::string name, Body&& body) {
  Check check;
  check.name = std::move(name);
  const auto t0 = Clock::now();
  try {
    body(check);
  } catch (const std::exception& e) {
    check.passed = false;
    check.detail = std::string("exception: ") + e.what();
  }
  check.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return check;
}

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream out;
  out.precision(6);
  (out << ... << args);
  return out.str();
}

std::vector<BoxPair> non_degenerate_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BoxPair> pairs;
  pairs.reserve(n);
  while (pairs.size() < n) {
    BoxPair pair = random_box_pair(rng);
    if (non_degenerate(pair)) pairs.push_back(pair);
  }
  return pairs;
}

double clip_area(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = box_corners_bev(a);
  const auto cb = box_corners_bev(b);
  return shoelace_area(clip_polygons(ca, cb));
}

// Drops cyclically consecutive vertices closer than tol, as Sutherland-Hodgman repeats
// vertices where the clip edge passes through an existing corner.
std::size_t distinct_vertex_count(const std::vector<Vec2>& poly, double tol) {
  std::vector<Vec2> kept;
  for (const Vec2& v : poly) {
    if (!kept.empty() && std::abs(kept.back().x - v.x) <= tol &&
        std::abs(kept.back().y - v.y) <= tol) {
      continue;
    }
    kept.push_back(v);
  }
  while (kept.size() > 1 && std::abs(kept.back().x - kept.front().x) <= tol &&
         std::abs(kept.back().y - kept.front().y) <= tol) {
    kept.pop_back();
  }
  return kept.size();
}

PointCloud random_cloud(Rng& rng, std::size_t n, std::size_t channels, double lo, double hi) {
  std::vector<Point3> pts;
  std::vector<double> feats;
  pts.reserve(n);
  feats.reserve(n * channels);
  for (std::size_t i = 0; i < n; ++i) {
    pts.emplace_back(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
    for (std::size_t c = 0; c < channels; ++c) feats.push_back(rng.uniform(-1.0, 1.0));
  }
  return PointCloud(std::move(pts), std::move(feats), channels);
}

}  // namespace

BoxPair random_box_pair(Rng& rng) {
  const auto box = [&](double x, double y, double z) {
    return OrientedBox(x, y, z, rng.uniform(0.5, 5.0), rng.uniform(0.5, 5.0),
                       rng.uniform(0.5, 5.0),
                       rng.uniform(-std::numbers::pi, std::numbers::pi));
  };
  const OrientedBox g = box(0.0, 0.0, 0.0);
  const double dx = rng.uniform(-3.0, 3.0);
  const double dy = rng.uniform(-3.0, 3.0);
  const double dz = rng.uniform(-3.0, 3.0);
  return {box(dx, dy, dz), g};
}

bool non_degenerate(const BoxPair& pair) {
  const auto& [a, b] = pair;
  const double top = std::min(a.z() + 0.5 * a.h(), b.z() + 0.5 * b.h());
  const double bottom = std::max(a.z() - 0.5 * a.h(), b.z() - 0.5 * b.h());
  return top - bottom > 1e-3 && clip_area(a, b) > 1e-3;
}

Check check_iou_oracle(const SuiteConfig& cfg) {
  return timed("iou_oracle_agreement", [&](Check& check) {
    const std::size_t n = scaled(1000, cfg);
    const auto pairs = non_degenerate_pairs(n, hash_combine(cfg.seed, 1));
    std::vector<double> err(n);
    const auto t0 = Clock::now();
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      OracleConfig oc;
      oc.samples = cfg.mc_samples;
      oc.seed = hash_combine(cfg.seed, 100 + i);
      const double mc = mc_iou3d(pairs[i].first, pairs[i].second, oc).value;
      err[i] = std::abs(iou3d(pairs[i].first, pairs[i].second).iou3d - mc);
    });
    const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    const std::size_t bad =
        static_cast<std::size_t>(std::count_if(err.begin(), err.end(), [](double e) { return e >= 2e-3; }));
    const double worst = *std::max_element(err.begin(), err.end());
    check.passed = bad == 0 && seconds < 300.0;
    check.detail = cat(n, " pairs, ", cfg.mc_samples, " samples each: ", bad,
                       " with |err| >= 2e-3, max err ", worst, ", ", seconds, " s (limit 300 s)");
  });
}

Check check_polygon_clip(const SuiteConfig& cfg) {
  return timed("polygon_clip_cross_check", [&](Check& check) {
    const std::size_t n = scaled(10'000, cfg);
    Rng rng(hash_combine(cfg.seed, 2));
    std::size_t area_bad = 0;
    std::size_t parity_bad = 0;
    std::size_t overlapping = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [a, b] = random_box_pair(rng);
      const auto ours = bev_intersection_polygon(a, b);
      const auto ca = box_corners_bev(a);
      const auto cb = box_corners_bev(b);
      const auto clipped = clip_polygons(ca, cb);
      const double diff = std::abs(shoelace_area(ours) - shoelace_area(clipped));
      worst = std::max(worst, diff);
      if (diff > 1e-7) ++area_bad;
      if (!ours.empty()) ++overlapping;
      if (ours.size() != distinct_vertex_count(clipped, 1e-7)) ++parity_bad;
    }
    check.passed = area_bad == 0 && parity_bad == 0;
    check.detail = cat(n, " pairs (", overlapping, " overlapping): ", area_bad,
                       " area mismatches > 1e-7 (max diff ", worst, "), ", parity_bad,
                       " vertex-count mismatches");
  });
}

Check check_gradient(const SuiteConfig& cfg) {
  return timed("iou_gradient_vs_finite_differences", [&](Check& check) {
    const std::size_t n = scaled(1000, cfg);
    const auto pairs = non_degenerate_pairs(n, hash_combine(cfg.seed, 3));
    constexpr double kStep = 1e-5;
    std::size_t flagged = 0;
    std::size_t good = 0;
    std::size_t evaluated = 0;
    double worst = 0.0;
    for (const auto& [a, b] : pairs) {
      const IouGradient g = iou3d_grad(a, b);
      if (!g.smooth) {
        ++flagged;
        continue;
      }
      ++evaluated;
      std::array<double, 14> x{};
      std::copy(a.params().begin(), a.params().end(), x.begin());
      std::copy(b.params().begin(), b.params().end(), x.begin() + 7);
      const ScalarFunction loss = [](std::span<const double> p) {
        return iou3d(OrientedBox(p[0], p[1], p[2], p[3], p[4], p[5], p[6]),
                     OrientedBox(p[7], p[8], p[9], p[10], p[11], p[12], p[13]))
            .loss;
      };
      const auto fd = finite_diff(loss, x, kStep);
      double diff = 0.0;
      double scale = 0.0;
      for (std::size_t i = 0; i < 14; ++i) {
        diff = std::max(diff, std::abs(g.grad[i] - fd[i]));
        scale = std::max(scale, std::abs(fd[i]));
      }
      const double rel = diff / std::max(scale, 1e-8);
      worst = std::max(worst, rel);
      if (rel < 1e-3) ++good;
    }
    const double flagged_frac = static_cast<double>(flagged) / static_cast<double>(n);
    const double good_frac =
        evaluated == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(evaluated);
    check.passed = good_frac >= 0.99 && flagged_frac < 0.02;
    check.detail = cat(n, " pairs: ", flagged, " flagged non-smooth (", 100.0 * flagged_frac,
                       "%), ", good, "/", evaluated, " within rel err 1e-3 (",
                       100.0 * good_frac, "%), worst rel err ", worst);
  });
}

Check check_iou_spot_values(const SuiteConfig& cfg) {
  return timed("iou_analytic_spot_values", [&](Check& check) {
    const OrientedBox unit(0, 0, 0, 1, 1, 1, 0);
    const double same = iou3d(unit, unit).iou3d;
    const double third = iou3d(OrientedBox(0.5, 0, 0, 1, 1, 1, 0), unit).iou3d;
    const OrientedBox turned(0, 0, 0, 1, 1, 1, std::numbers::pi / 4);
    const double octagon = iou3d(turned, unit).iou3d;
    OracleConfig oc;
    oc.samples = cfg.mc_samples;
    oc.seed = hash_combine(cfg.seed, 4);
    oc.threads = cfg.threads;
    const McEstimate mc = mc_iou3d(turned, unit, oc);
    const double expected = 0.70711;
    const bool ok_same = same == 1.0;
    const bool ok_third = std::abs(third - 1.0 / 3.0) <= 1e-9;
    const bool ok_oct = std::abs(octagon - expected) <= 1e-3 && std::abs(mc.value - expected) <= 1e-3;
    check.passed = ok_same && ok_third && ok_oct;
    check.detail = cat("identical ", same, ", offset ", third, " (err ",
                       std::abs(third - 1.0 / 3.0), "), rotated ", octagon, " vs Monte Carlo ",
                       mc.value, " +- ", mc.std_error);
  });
}

Check check_sampling_equivalence(const SuiteConfig& cfg) {
  return timed("sampling_strategy_equivalence", [&](Check& check) {
    const std::size_t n_clouds = scaled(100, cfg);
    Rng rng(hash_combine(cfg.seed, 5));
    std::size_t failures = 0;
    std::size_t total_points = 0;
    std::string first_failure;
    for (std::size_t t = 0; t < n_clouds; ++t) {
      const auto n = static_cast<std::size_t>(std::exp(rng.uniform(std::log(1e3), std::log(1e5))));
      const double side = rng.uniform(2.0, 20.0);
      const PointCloud cloud = random_cloud(rng, n, 1, -0.5, side + 0.5);
      total_points += n;
      SamplingConfig sc;
      sc.resolution = rng.uniform(0.1, 1.0);
      sc.extents = Extents{Point3(0, 0, 0), side, side, side};
      sc.seed = rng.next();
      sc.deterministic = rng.below(2) == 0;
      sc.threads = rng.below(2) == 0 ? 1 : 4;
      const SampleResult buf = downsample_grid_buffer(cloud, sc);
      sc.strategy = SamplingStrategy::SortUnique;
      const SampleResult srt = downsample_sort_unique(cloud, sc);

      std::string why;
      const auto audit = [&](const SampleResult& r, const char* label) {
        std::set<CellIndex> cells;
        for (const std::uint32_t i : r.indices) {
          if (i >= cloud.size()) {
            why = cat(label, ": index out of range");
            return std::set<CellIndex>{};
          }
          if (!sc.extents->contains(cloud.point(i))) why = cat(label, ": point outside extents");
          if (!cells.insert(sampling_cell(cloud.point(i), sc)).second) {
            why = cat(label, ": two points in one cell");
          }
        }
        if (cells.size() != r.occupied_cells.size() ||
            !std::equal(cells.begin(), cells.end(),
                        std::set<CellIndex>(r.occupied_cells.begin(), r.occupied_cells.end()).begin())) {
          why = cat(label, ": reported cells differ from selected points");
        }
        return cells;
      };
      const auto cb = audit(buf, "buffer");
      const auto cs = audit(srt, "sort");
      if (why.empty() && cb != cs) why = "occupied-cell sets differ";
      if (why.empty() && buf.dropped != srt.dropped) why = "dropped counts differ";
      if (!why.empty()) {
        ++failures;
        if (first_failure.empty()) first_failure = cat(" (cloud ", t, ": ", why, ")");
      }
    }
    check.passed = failures == 0;
    check.detail = cat(n_clouds, " clouds, ", total_points, " points: ", failures, " failures",
                       first_failure);
  });
}

Check check_buffer_memory(const SuiteConfig&) {
  return timed("grid_buffer_memory", [&](Check& check) {
    const Extents extents{Point3(-75.0, -75.0, -3.0), 150.0, 150.0, 6.0};
    SamplingConfig sc;
    sc.resolution = 0.1;
    sc.extents = extents;
    const PointCloud one({Point3(0, 0, 0)}, {1.0}, 1);
    const SampleResult r = downsample_grid_buffer(one, sc);
    const double ratio = static_cast<double>(r.peak_buffer_bytes) / 500e6;
    check.passed = r.peak_buffer_bytes == 540'000'000ULL &&
                   plan_grid_buffer(extents, 0.1).bytes() == 540'000'000ULL &&
                   std::abs(ratio - 1.0) <= 0.10;
    check.detail = cat(r.buffer_slots, " slots, peak ", r.peak_buffer_bytes,
                       " bytes (", 100.0 * (ratio - 1.0), "% from 500 MB)");
  });
}

Check check_complexity_scaling(const SuiteConfig& cfg) {
  return timed("downsampling_complexity_scaling", [&](Check& check) {
    BenchConfig bc;
    bc.sizes = cfg.scale >= 1.0
                   ? std::vector<std::size_t>{10'000, 31'623, 100'000, 316'228, 1'000'000}
                   : std::vector<std::size_t>{10'000, 31'623, 100'000};
    bc.repeats = 5;
    bc.min_seconds = 0.1;
    bc.include_voxelize = false;
    bc.seed = hash_combine(cfg.seed, 7);
    bc.threads = 1;
    const auto t0 = Clock::now();
    const BenchTable table = bench(bc);
    const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    const double buf = table.slopes[0];
    const double srt = table.slopes[1];
    check.passed = buf >= 0.8 && buf <= 1.3 && srt >= 0.9 && srt <= 1.5 && seconds < 600.0;
    check.detail = cat(bc.sizes.front(), " -> ", bc.sizes.back(), " points: buffer slope ", buf,
                       " (want [0.8, 1.3]), sort slope ", srt, " (want [0.9, 1.5]), ", seconds,
                       " s");
  });
}

Check check_voxelization_oracle(const SuiteConfig& cfg) {
  return timed("voxelization_vs_brute_force", [&](Check& check) {
    const std::size_t n_inst = scaled(200, cfg);
    Rng rng(hash_combine(cfg.seed, 8));
    std::size_t set_mismatch = 0;
    std::size_t feature_mismatch = 0;
    std::size_t queries = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < n_inst; ++t) {
      const std::size_t n = t % 20 == 0 ? 0 : 1 + rng.below(2000);
      const std::size_t channels = 1 + rng.below(3);
      const double side = rng.uniform(0.5, 3.0);
      PointCloud cloud = random_cloud(rng, n, channels, 0.0, side);
      VoxelizationConfig vc;
      vc.radius = rng.uniform(0.05, 0.6);
      vc.k = 1 + 2 * rng.below(3);
      const std::size_t caps[] = {0, 0, 2, 5};
      vc.max_points_per_voxel = caps[rng.below(4)];
      vc.append_offsets = rng.below(2) == 0;
      vc.profile = rng.below(2) == 0 ? VoxelizeProfile::Dense : VoxelizeProfile::Compact;
      const AccelGrid grid = build_accel_grid(cloud, vc.voxel_edge());
      for (std::size_t q = 0; q < 5; ++q) {
        const Point3 center = (n > 0 && q % 2 == 0)
                                  ? cloud.point(rng.below(n))
                                  : Point3(rng.uniform(0, side), rng.uniform(0, side),
                                           rng.uniform(0, side));
        ++queries;
        if (radius_neighbors(grid, cloud, center, vc.radius) !=
            brute_neighbors(cloud, center, vc.radius)) {
          ++set_mismatch;
        }
        const LocalVoxelTensor fast = voxelize(cloud, center, vc, grid);
        const LocalVoxelTensor slow = brute_voxelize(cloud, center, vc);
        double diff = fast.data().size() == slow.data().size() ? 0.0 : 1e300;
        for (std::size_t i = 0; i < std::min(fast.data().size(), slow.data().size()); ++i) {
          diff = std::max(diff, std::abs(fast.data()[i] - slow.data()[i]));
        }
        worst = std::max(worst, diff);
        if (diff > 1e-6) ++feature_mismatch;
      }
    }
    check.passed = set_mismatch == 0 && feature_mismatch == 0;
    check.detail = cat(n_inst, " instances, ", queries, " queries: ", set_mismatch,
                       " neighbor-set mismatches, ", feature_mismatch,
                       " tensors off by > 1e-6 (max diff ", worst, ")");
  });
}

namespace {

// Location-aware pooling written out per cell from scratch: box-frame transform, inclusive
// test, floor binning, first n_max points by index, exp(1 - d / r) weights, mean over the
// points used.
std::vector<double> direct_pool(const PointCloud& cloud, const OrientedBox& b, std::size_t k,
                                std::size_t n_max, std::size_t& truncated) {
  const std::size_t c = cloud.channels();
  const double kd = static_cast<double>(k);
  const double r = std::max({b.w() / kd, b.l() / kd, b.h() / kd});
  const double cs = std::cos(b.r()), sn = std::sin(b.r());
  std::vector<double> out(k * k * k * c, 0.0);
  for (std::size_t cell = 0; cell < k * k * k; ++cell) {
    const std::size_t ix = cell / (k * k), iy = (cell / k) % k, iz = cell % k;
    const double cx = -b.w() / 2 + (ix + 0.5) * b.w() / kd;
    const double cy = -b.l() / 2 + (iy + 0.5) * b.l() / kd;
    const double cz = -b.h() / 2 + (iz + 0.5) * b.h() / kd;
    std::size_t used = 0;
    std::size_t members = 0;
    std::vector<double> acc(c, 0.0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Point3& p = cloud.point(i);
      const double dx = p.x() - b.x(), dy = p.y() - b.y();
      const double qx = cs * dx + sn * dy, qy = -sn * dx + cs * dy, qz = p.z() - b.z();
      if (std::abs(qx) > b.w() / 2 || std::abs(qy) > b.l() / 2 || std::abs(qz) > b.h() / 2) continue;
      const auto bin = [&](double q, double e) {
        const double f = std::floor((q + e / 2) / (e / kd));
        return static_cast<std::size_t>(std::clamp(f, 0.0, kd - 1));
      };
      if ((bin(qx, b.w()) * k + bin(qy, b.l())) * k + bin(qz, b.h()) != cell) continue;
      ++members;
      if (used == n_max) continue;
      ++used;
      const double d = std::sqrt((qx - cx) * (qx - cx) + (qy - cy) * (qy - cy) + (qz - cz) * (qz - cz));
      const double w = std::exp(1.0 - d / r);
      for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += w * cloud.feature(i)[ch];
    }
    if (members > n_max) ++truncated;
    for (std::size_t ch = 0; ch < c && used > 0; ++ch) out[cell * c + ch] = acc[ch] / used;
  }
  return out;
}

}  // namespace

Check check_la_pool(const SuiteConfig& cfg) {
  return timed("la_pool_exactness", [&](Check& check) {
    const std::size_t n_roi = scaled(100, cfg);
    Rng rng(hash_combine(cfg.seed, 9));
    std::size_t bad = 0;
    std::size_t truncated = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < n_roi; ++t) {
      const OrientedBox box(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1),
                            rng.uniform(1, 5), rng.uniform(1, 5), rng.uniform(1, 3),
                            rng.uniform(-std::numbers::pi, std::numbers::pi));
      const std::size_t n = 20 + rng.below(600);
      const std::size_t channels = 1 + rng.below(3);
      std::vector<Point3> pts;
      std::vector<double> feats;
      const double cs = std::cos(box.r()), sn = std::sin(box.r());
      for (std::size_t i = 0; i < n; ++i) {
        const double lx = rng.uniform(-0.6, 0.6) * box.w();
        const double ly = rng.uniform(-0.6, 0.6) * box.l();
        const double lz = rng.uniform(-0.6, 0.6) * box.h();
        pts.emplace_back(box.x() + cs * lx - sn * ly, box.y() + sn * lx + cs * ly, box.z() + lz);
        for (std::size_t c = 0; c < channels; ++c) feats.push_back(rng.uniform(-1, 1));
      }
      const PointCloud cloud(std::move(pts), std::move(feats), channels);
      RoiPoolConfig rc;
      rc.k = 5;
      rc.n_max = t % 4 == 3 ? 1 + rng.below(8) : 5;
      const PooledRoi pooled = la_pool(cloud, box, rc);
      const auto expect = direct_pool(cloud, box, rc.k, rc.n_max, truncated);
      double diff = 0.0;
      for (std::size_t i = 0; i < expect.size(); ++i) {
        diff = std::max(diff, std::abs(pooled.grid[i] - expect[i]));
      }
      worst = std::max(worst, diff);
      if (diff > 1e-6) ++bad;
    }

    // A single point on a cell center gets weight e; the weight at d = r is 1.
    const OrientedBox aligned(1.0, 2.0, 0.5, 5.0, 5.0, 5.0, 0.0);
    const PointCloud centered({Point3(1.0, 2.0, 0.5)}, {0.75}, 1);
    const PooledRoi at_center = la_pool(centered, aligned, RoiPoolConfig{});
    const double w0 = at_center.cell(2, 2, 2)[0] / 0.75;
    const bool ok_center = std::abs(w0 - std::numbers::e) <= 1e-12;
    const bool ok_edge = la_weight(0.8, 0.8) == 1.0 && la_weight(0.0, 0.8) == std::exp(1.0);

    check.passed = bad == 0 && truncated > 0 && ok_center && ok_edge;
    check.detail = cat(n_roi, " RoIs: ", bad, " off by > 1e-6 (max diff ", worst, "), ",
                       truncated, " truncated cells, d=0 weight ", w0, ", d=r weight ",
                       la_weight(0.8, 0.8));
  });
}

Check check_head_shapes(const SuiteConfig& cfg) {
  return timed("refine_head_shape_trace", [&](Check& check) {
    Rng rng(hash_combine(cfg.seed, 10));
    std::string failures;
    for (const std::size_t c : {std::size_t{1}, std::size_t{7}, std::size_t{240}}) {
      const RefineHeadWeights w = init_refine_head(c, rng.next(), 8, 16, 8);
      PooledRoi roi{5, c, std::vector<double>(125 * c), OrientedBox(0, 0, 0, 1, 1, 1, 0)};
      for (double& v : roi.grid) v = rng.uniform(-1, 1);
      const RefineOutput out = refine_head(roi, w);
      if (out.spatial_trace != std::vector<std::size_t>{5, 3, 1}) failures += cat(" trace(c=", c, ")");
      if (!std::isfinite(out.confidence_logit)) failures += cat(" nonfinite(c=", c, ")");
    }
    const auto rejects = [&](const PooledRoi& roi, const RefineHeadWeights& w) {
      try {
        refine_head(roi, w);
      } catch (const ShapeError&) {
        return true;
      }
      return false;
    };
    const RefineHeadWeights w4 = init_refine_head(4, 1, 8, 16, 8);
    const OrientedBox unit(0, 0, 0, 1, 1, 1, 0);
    if (!rejects(PooledRoi{4, 4, std::vector<double>(64 * 4), unit}, w4)) failures += " accepted 4^3";
    if (!rejects(PooledRoi{6, 4, std::vector<double>(216 * 4), unit}, w4)) failures += " accepted 6^3";
    if (!rejects(PooledRoi{5, 3, std::vector<double>(125 * 3), unit}, w4)) {
      failures += " accepted channel mismatch";
    }
    check.passed = failures.empty();
    check.detail = failures.empty()
                       ? std::string("5 -> 3 -> 1 for 1, 7, 240 channels; 4^3, 6^3 and channel "
                                     "mismatch rejected")
                       : "failures:" + failures;
  });
}

Check check_loss_identities(const SuiteConfig& cfg) {
  return timed("loss_identities", [&](Check& check) {
    Rng rng(hash_combine(cfg.seed, 11));
    double worst_rot = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double r = rng.uniform(-2 * std::numbers::pi, 2 * std::numbers::pi);
      worst_rot = std::max({worst_rot, std::abs(rot_loss(r, r)), std::abs(rot_loss(r + std::numbers::pi, r))});
    }
    const bool ok_smooth = smooth_l1(1.0) == 0.5 && smooth_l1(-1.0) == 0.5 &&
                           std::abs(smooth_l1(1.0 - 1e-9) - 0.5) < 2e-9 &&
                           std::abs(smooth_l1(1.0 + 1e-9) - 0.5) < 2e-9;
    double worst_comp = 0.0;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a(1 + rng.below(20)), b(1 + rng.below(20)), c(1 + rng.below(20)),
          d(1 + rng.below(20));
      for (auto* v : {&a, &b, &c, &d}) {
        for (double& x : *v) x = rng.uniform(0, 3);
      }
      const auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (const double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      const double s1 = mean(a) + 2 * mean(b) + 0.5 * mean(c);
      const double s2 = s1 + 0.5 * mean(d);
      worst_comp = std::max({worst_comp, std::abs(stage1_loss(a, b, c) - s1),
                             std::abs(stage2_loss(a, b, c, d) - s2)});
    }
    check.passed = worst_rot <= 1e-12 && ok_smooth && worst_comp <= 1e-12;
    check.detail = cat("max |rot_loss| at r and r+pi ", worst_rot, ", smooth_l1 at |x|=1 ",
                       smooth_l1(1.0), (ok_smooth ? " (continuous)" : " (DISCONTINUOUS)"),
                       ", stage composition max err ", worst_comp);
  });
}

Check check_determinism(const SuiteConfig& cfg) {
  return timed("end_to_end_determinism", [&](Check& check) {
    const std::size_t n = scaled(100'000, cfg);
    const SyntheticScene scene = synth_scene(n, 8, hash_combine(cfg.seed, 12));
    PipelineConfig pc;
    const ModelWeights weights = init_model_weights(pc, 1, hash_combine(cfg.seed, 13));
    std::vector<ForwardResult> runs;
    for (const unsigned t : {1u, 1u, 4u, 8u}) {
      pc.set_threads(t);
      runs.push_back(run_forward(scene.cloud, pc, weights));
    }
    std::size_t differing = 0;
    for (std::size_t i = 1; i < runs.size(); ++i) {
      if (runs[i].proposals != runs[0].proposals || runs[i].refined != runs[0].refined ||
          runs[i].key_point_counts != runs[0].key_point_counts) {
        ++differing;
      }
    }
    const auto& counts = runs[0].key_point_counts;
    const bool monotone = std::is_sorted(counts.rbegin(), counts.rend());
    check.passed = differing == 0 && monotone && !runs[0].proposals.empty();
    std::string list;
    for (const auto c : counts) list += (list.empty() ? "" : ", ") + std::to_string(c);
    check.detail = cat(n, " points, threads 1/1/4/8: ", differing, " runs differ from the first, ",
                       runs[0].proposals.size(), " proposals, ", runs[0].refined.size(),
                       " refined, key-points per block [", list, "]");
  });
}

std::vector<Check> run_suite(const SuiteConfig& cfg,
                             const std::function<void(const Check&)>& on_check) {
  using Fn = Check (*)(const SuiteConfig&);
  std::vector<Fn> fns = {check_iou_oracle,       check_polygon_clip,
                         check_gradient,         check_iou_spot_values,
                         check_sampling_equivalence, check_buffer_memory};
  if (cfg.include_bench) fns.push_back(check_complexity_scaling);
  for (Fn f : {check_voxelization_oracle, check_la_pool, check_head_shapes,
               check_loss_identities, check_determinism}) {
    fns.push_back(f);
  }
  std::vector<Check> out;
  for (Fn f : fns) {
    out.push_back(f(cfg));
    if (on_check) on_check(out.back());
  }
  return out;
}

}  // namespace dvdet
