#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dvdet/losses.hpp"
#include "dvdet/random.hpp"

using namespace dvdet;

namespace {

double naive_bce(double logit, double t) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return -(t * std::log(p) + (1 - t) * std::log(1 - p));
}

}  // namespace

TEST_CASE("sigmoid and bce") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-8, 8), t = rng.uniform();
    CHECK(bce_with_logit(x, t) == doctest::Approx(naive_bce(x, t)).epsilon(1e-9));
  }
  // Saturated logits hit the log floor instead of producing infinities.
  CHECK(bce_with_logit(-1000.0, 1.0) == doctest::Approx(-std::log(1e-12)));
  CHECK(bce_with_logit(1000.0, 1.0) == 0.0);
}

TEST_CASE("focal loss") {
  const FocalParams fp;
  SUBCASE("gamma 0 reduces to weighted cross-entropy") {
    const FocalParams flat{0.0, 0.25};
    CHECK(focal_loss(1.3, true, flat) == doctest::Approx(0.25 * naive_bce(1.3, 1.0)));
    CHECK(focal_loss(1.3, false, flat) == doctest::Approx(0.75 * naive_bce(1.3, 0.0)));
  }
  SUBCASE("hand-computed value") {
    const double p = 1.0 / (1.0 + std::exp(-0.5));
    CHECK(focal_loss(0.5, true, fp) == doctest::Approx(-0.25 * (1 - p) * (1 - p) * std::log(p)));
  }
  SUBCASE("confident correct predictions cost almost nothing") {
    CHECK(focal_loss(12.0, true, fp) < 1e-9);
    CHECK(focal_loss(-12.0, false, fp) < 1e-9);
    CHECK(focal_loss(-12.0, true, fp) > 2.0);
  }
}

TEST_CASE("smooth L1 and rotation loss") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(-2.0) == 1.5);
  CHECK(smooth_l1(1.0) == 0.5);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(-10, 10), b = rng.uniform(-10, 10);
    // Heading ambiguity: r and r + pi cost the same, up to rounding in sin.
    CHECK(std::abs(rot_loss(a + std::numbers::pi, b) - rot_loss(a, b)) <= 1e-12);
    CHECK(rot_loss(a, b) <= 0.5);
    CHECK(rot_loss(a, b) >= 0.0);
    const double h = 1e-6;
    const double fd = (rot_loss(a + h, b) - rot_loss(a - h, b)) / (2 * h);
    CHECK(rot_loss_grad(a, b) == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
  }
  CHECK(rot_loss(0.3, 0.3) == 0.0);
}

TEST_CASE("flip label and loss") {
  CHECK_FALSE(flip_label(0.0, 0.0));
  CHECK(flip_label(std::numbers::pi, 0.0));
  CHECK_FALSE(flip_label(1.5, 0.0));
  CHECK(flip_label(1.6, 0.0));
  CHECK(flip_loss(20.0, 3.0, 0.0) < 1e-8);
  CHECK(flip_loss(20.0, 0.1, 0.0) > 19.0);
}

TEST_CASE("confidence target") {
  const ConfidenceTarget t;
  CHECK(t(0.0) == 0.0);
  CHECK(t(0.25) == 0.0);
  CHECK(t(0.5) == 0.5);
  CHECK(t(0.75) == 1.0);
  CHECK(t(1.0) == 1.0);
  CHECK(conf_loss(0.0, 0.5) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(conf_loss(0.0, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(conf_loss(0.0, std::nan("")), std::invalid_argument);
}

TEST_CASE("stage totals") {
  const std::vector<double> cls{1, 3}, iou{0.5}, rot{0.2, 0.4}, flip{0.1};
  CHECK(stage1_loss(cls, iou, rot) == doctest::Approx(2 + 2 * 0.5 + 0.5 * 0.3));
  CHECK(stage2_loss(cls, iou, rot, flip) == doctest::Approx(2 + 1 + 0.15 + 0.05));
  CHECK(stage1_loss(cls, {}, {}) == 2.0);
  const LossWeights w{1.0, 0.0, 0.0};
  CHECK(stage2_loss(cls, iou, rot, flip, w) == doctest::Approx(2.5));
}

TEST_CASE("evaluate_stage1 and evaluate_stage2") {
  const OrientedBox gt(0, 0, 0, 2, 4, 1.5, 0.3);
  TargetAssignment targets;
  targets.foreground = {true, false};
  targets.gt_boxes = {gt, std::nullopt};

  SUBCASE("perfect foreground box") {
    const std::vector<Stage1Prediction> preds{{8.0, gt}, {-8.0, gt}};
    const auto b = evaluate_stage1(preds, targets);
    CHECK(b.foreground == 1);
    CHECK(b.iou <= 1e-12);
    CHECK(b.rot == 0.0);
    CHECK(b.total == doctest::Approx(b.cls_or_conf + 2.0 * b.iou));
  }
  SUBCASE("stage 2 uses the IoU as the confidence target") {
    const OrientedBox flipped(0, 0, 0, 2, 4, 1.5, 0.3 + std::numbers::pi);
    const std::vector<Stage2Prediction> preds{{0.0, 5.0, flipped}, {0.0, 0.0, gt}};
    const auto b = evaluate_stage2(preds, targets);
    CHECK(b.foreground == 1);
    CHECK(b.iou == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    // Foreground target 1 and background target 0 at logit 0 both cost log 2.
    CHECK(b.cls_or_conf == doctest::Approx(std::log(2.0)));
    CHECK(b.flip == doctest::Approx(bce_with_logit(5.0, 1.0)));
  }
  SUBCASE("malformed assignments") {
    const std::vector<Stage1Prediction> one{{0.0, gt}};
    CHECK_THROWS_AS(evaluate_stage1(one, targets), std::invalid_argument);
    TargetAssignment bad = targets;
    bad.gt_boxes[1] = gt;
    const std::vector<Stage1Prediction> two{{0.0, gt}, {0.0, gt}};
    CHECK_THROWS_AS(evaluate_stage1(two, bad), std::invalid_argument);
  }
}
