#include "dvdet/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <limits>
#include <memory>
#include <random>
#include <string>

#include "dvdet/parallel.hpp"
#include "dvdet/random.hpp"

namespace dvdet {

namespace {

std::int64_t slots_along(double size, double r) {
  const double q = size / r;
  const double nearest = std::round(q);
  if (std::abs(q - nearest) <= 1e-9 * std::max(1.0, q)) {
    return static_cast<std::int64_t>(nearest);
  }
  return static_cast<std::int64_t>(std::ceil(q));
}

Point3 origin_of(const SamplingConfig& cfg) {
  return cfg.extents ? cfg.extents->min : Point3{};
}

void check_resolution(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw std::invalid_argument("sampling: resolution must be positive and finite");
  }
}

// Admission shared by both strategies so their occupied-cell sets agree.
class Admission {
 public:
  explicit Admission(const SamplingConfig& cfg) : cfg_(cfg), origin_(origin_of(cfg)) {
    if (cfg.extents) plan_ = plan_grid_buffer(*cfg.extents, cfg.resolution);
  }

  std::optional<CellIndex> cell(const Point3& p) const {
    if (cfg_.extents && !cfg_.extents->contains(p)) return std::nullopt;
    const CellIndex c = cell_of(p - origin_, cfg_.resolution);
    if (plan_ && (c.i < 0 || c.j < 0 || c.k < 0 || c.i >= plan_->nx || c.j >= plan_->ny ||
                  c.k >= plan_->nz)) {
      return std::nullopt;
    }
    return c;
  }

  std::uint64_t slot(const CellIndex& c) const {
    return (static_cast<std::uint64_t>(c.i) * static_cast<std::uint64_t>(plan_->ny) +
            static_cast<std::uint64_t>(c.j)) *
               static_cast<std::uint64_t>(plan_->nz) +
           static_cast<std::uint64_t>(c.k);
  }

  const std::optional<GridBufferPlan>& plan() const { return plan_; }

 private:
  const SamplingConfig& cfg_;
  Point3 origin_;
  std::optional<GridBufferPlan> plan_;
};

// Slot numbers are stored per point in the narrowest type that holds them; the all-ones
// value marks points outside the extents.
template <typename SlotT>
SampleResult claim_slots(const PointCloud& cloud, const SamplingConfig& cfg,
                         const Admission& admission, std::uint32_t* const slot_data) {
  constexpr SlotT kOutside = std::numeric_limits<SlotT>::max();
  const std::size_t n = cloud.size();
  std::vector<SlotT> slot_of(n, kOutside);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    if (const auto c = admission.cell(cloud.point(i))) {
      slot_of[i] = static_cast<SlotT>(admission.slot(*c));
    }
  });

  // Slot reads and writes are random; prefetching a few points ahead overlaps the misses.
  constexpr std::size_t kAhead = 16;
  const auto prefetch = [&](std::size_t i) {
    if (i < n && slot_of[i] != kOutside) __builtin_prefetch(slot_data + slot_of[i], 1);
  };
  if (cfg.threads <= 1) {
    // Ascending order makes the first claim the lowest index; plain stores avoid the
    // serializing effect of atomic read-modify-write on outstanding misses.
    for (std::size_t i = 0; i < n; ++i) {
      prefetch(i + kAhead);
      const SlotT s = slot_of[i];
      if (s != kOutside && slot_data[s] == 0) slot_data[s] = static_cast<std::uint32_t>(i + 1);
    }
  } else {
    const bool deterministic = cfg.deterministic;
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      prefetch(i + kAhead);
      const SlotT s = slot_of[i];
      if (s == kOutside) return;
      std::atomic_ref<std::uint32_t> claim(slot_data[s]);
      const auto mine = static_cast<std::uint32_t>(i + 1);
      if (deterministic) {
        // Lowest index wins regardless of schedule.
        std::uint32_t cur = claim.load(std::memory_order_relaxed);
        while ((cur == 0 || cur > mine) &&
               !claim.compare_exchange_weak(cur, mine, std::memory_order_relaxed)) {
        }
      } else {
        std::uint32_t empty = 0;
        claim.compare_exchange_strong(empty, mine, std::memory_order_relaxed);
      }
    });
  }

  SampleResult result;
  for (std::size_t i = 0; i < n; ++i) {
    prefetch(i + kAhead);
    const SlotT s = slot_of[i];
    if (s == kOutside) {
      ++result.dropped;
      continue;
    }
    if (slot_data[s] == i + 1) {
      result.indices.push_back(static_cast<std::uint32_t>(i));
      result.occupied_cells.push_back(*admission.cell(cloud.point(i)));
    }
  }
  return result;
}

struct FreeDeleter {
  void operator()(std::uint32_t* p) const { std::free(p); }
};

}  // namespace

bool Extents::contains(const Point3& p) const {
  return p.x() >= min.x() && p.x() < min.x() + size_x && p.y() >= min.y() &&
         p.y() < min.y() + size_y && p.z() >= min.z() && p.z() < min.z() + size_z;
}

GridBufferPlan plan_grid_buffer(const Extents& extents, double resolution) {
  check_resolution(resolution);
  if (!(extents.size_x > 0.0 && extents.size_y > 0.0 && extents.size_z > 0.0) ||
      !std::isfinite(extents.size_x) || !std::isfinite(extents.size_y) ||
      !std::isfinite(extents.size_z)) {
    throw std::invalid_argument("sampling: extents must be positive and finite");
  }
  return {slots_along(extents.size_x, resolution), slots_along(extents.size_y, resolution),
          slots_along(extents.size_z, resolution)};
}

CellIndex sampling_cell(const Point3& p, const SamplingConfig& cfg) {
  return cell_of(p - origin_of(cfg), cfg.resolution);
}

SampleResult downsample_grid_buffer(const PointCloud& cloud, const SamplingConfig& cfg) {
  if (cfg.strategy != SamplingStrategy::GridBuffer) {
    throw std::invalid_argument("downsample_grid_buffer: config selects a different strategy");
  }
  check_resolution(cfg.resolution);
  if (!cfg.extents) {
    throw std::invalid_argument("downsample_grid_buffer: finite extents are required");
  }
  if (cloud.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw CapacityError("downsample_grid_buffer: point count exceeds 32-bit slot payload");
  }
  const Admission admission(cfg);
  const GridBufferPlan plan = *admission.plan();
  const std::uint64_t slots = plan.slots();
  if (slots > cfg.max_buffer_slots) {
    throw CapacityError("downsample_grid_buffer: " + std::to_string(slots) +
                        " slots exceed the cap of " + std::to_string(cfg.max_buffer_slots));
  }

  // Slot payload is (point index + 1); 0 marks an empty slot. calloc keeps untouched pages lazy.
  std::unique_ptr<std::uint32_t, FreeDeleter> buffer(
      static_cast<std::uint32_t*>(std::calloc(slots, sizeof(std::uint32_t))));
  if (!buffer) {
    throw CapacityError("downsample_grid_buffer: failed to allocate " +
                        std::to_string(plan.bytes()) + " bytes");
  }

  SampleResult result =
      slots < std::numeric_limits<std::uint32_t>::max()
          ? claim_slots<std::uint32_t>(cloud, cfg, admission, buffer.get())
          : claim_slots<std::uint64_t>(cloud, cfg, admission, buffer.get());
  result.buffer_slots = slots;
  result.peak_buffer_bytes = plan.bytes();
  return result;
}

SampleResult downsample_sort_unique(const PointCloud& cloud, const SamplingConfig& cfg) {
  if (cfg.strategy != SamplingStrategy::SortUnique) {
    throw std::invalid_argument("downsample_sort_unique: config selects a different strategy");
  }
  check_resolution(cfg.resolution);
  const Admission admission(cfg);

  const std::size_t n = cloud.size();
  std::vector<std::optional<CellIndex>> cells(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) { cells[i] = admission.cell(cloud.point(i)); });

  SampleResult result;
  std::vector<std::pair<CellIndex, std::uint32_t>> keyed;
  keyed.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cells[i]) {
      keyed.emplace_back(*cells[i], static_cast<std::uint32_t>(i));
    } else {
      ++result.dropped;
    }
  }
  std::sort(keyed.begin(), keyed.end());

  const std::uint64_t seed = cfg.deterministic ? cfg.seed : std::random_device{}();
  for (std::size_t begin = 0; begin < keyed.size();) {
    std::size_t end = begin + 1;
    while (end < keyed.size() && keyed[end].first == keyed[begin].first) ++end;
    const CellIndex& cell = keyed[begin].first;
    const std::uint64_t pick = hash_combine(seed, CellIndexHash{}(cell)) % (end - begin);
    result.indices.push_back(keyed[begin + pick].second);
    result.occupied_cells.push_back(cell);
    begin = end;
  }
  return result;
}

SampleResult downsample(const PointCloud& cloud, const SamplingConfig& cfg) {
  return cfg.strategy == SamplingStrategy::GridBuffer ? downsample_grid_buffer(cloud, cfg)
                                                      : downsample_sort_unique(cloud, cfg);
}

PointCloud gather(const PointCloud& cloud, const SampleResult& result) {
  PointCloud out(cloud.channels());
  out.reserve(result.indices.size());
  for (const std::uint32_t i : result.indices) {
    if (i >= cloud.size()) {
      throw std::out_of_range("gather: index " + std::to_string(i) + " out of range");
    }
    out.push_back(cloud.point(i), cloud.feature(i));
  }
  return out;
}

}  // namespace dvdet
