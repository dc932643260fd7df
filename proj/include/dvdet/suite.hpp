#pragma once

// Oracle-backed checks shared by the acceptance binary and `dvdet verify`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dvdet/core.hpp"
#include "dvdet/iou.hpp"
#include "dvdet/random.hpp"

namespace dvdet {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteConfig {
  /// Multiplies every instance count; 1.0 runs the full-size sweeps.
  double scale = 1.0;
  std::uint64_t seed = 20210601;
  unsigned threads = 1;
  /// Monte Carlo samples per IoU estimate.
  std::uint64_t mc_samples = 1'000'000;
  bool include_bench = true;
};

/// Dims in [0.5, 5], yaw in [-pi, pi], center offsets in [-3, 3] on every axis.
BoxPair random_box_pair(Rng& rng);

/// Positive BEV overlap and height overlap, both above 1e-3, judged by the clipping oracle.
bool non_degenerate(const BoxPair& pair);

Check check_iou_oracle(const SuiteConfig& cfg);
Check check_polygon_clip(const SuiteConfig& cfg);
Check check_gradient(const SuiteConfig& cfg);
Check check_iou_spot_values(const SuiteConfig& cfg);
Check check_sampling_equivalence(const SuiteConfig& cfg);
Check check_buffer_memory(const SuiteConfig& cfg);
Check check_complexity_scaling(const SuiteConfig& cfg);
Check check_voxelization_oracle(const SuiteConfig& cfg);
Check check_la_pool(const SuiteConfig& cfg);
Check check_head_shapes(const SuiteConfig& cfg);
Check check_loss_identities(const SuiteConfig& cfg);
Check check_determinism(const SuiteConfig& cfg);

/// Runs every check in order, reporting each one as it finishes.
std::vector<Check> run_suite(const SuiteConfig& cfg,
                             const std::function<void(const Check&)>& on_check = {});

}  // namespace dvdet
