#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dvdet/core.hpp"

namespace dvdet {

/// Stage weights: L1 = cls + alpha iou + beta rot; L2 = conf + alpha iou + beta rot + gamma flip.
struct LossWeights {
  double alpha = 2.0;
  double beta = 0.5;
  double gamma = 0.5;
};

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
};

/// Soft IoU target t = clamp(slope * iou + offset, 0, 1).
struct ConfidenceTarget {
  double slope = 2.0;
  double offset = -0.5;
  double operator()(double iou) const;
};

double sigmoid(double logit);

/// Binary cross-entropy of a logit against a target in [0, 1]; log clamped at 1e-12.
double bce_with_logit(double logit, double target);

/// -alpha_t (1 - p_t)^gamma log p_t, p = sigmoid(logit), alpha_t = alpha for positives.
double focal_loss(double logit, bool target, const FocalParams& params = {});

double smooth_l1(double x);

/// smooth_l1(sin(r_p - r_g)).
double rot_loss(double r_p, double r_g);
/// d rot_loss / d r_p.
double rot_loss_grad(double r_p, double r_g);

/// Positive label when the headings differ by more than 90 degrees (cos < 0).
bool flip_label(double r_p, double r_g);
double flip_loss(double flip_logit, double r_p, double r_g);

double conf_loss(double conf_logit, double iou_with_gt, const ConfidenceTarget& target = {});

/// mean(cls) + alpha mean(iou) + beta mean(rot); empty regression spans contribute 0.
double stage1_loss(std::span<const double> cls_terms, std::span<const double> iou_terms,
                   std::span<const double> rot_terms, const LossWeights& w = {});

/// mean(conf) + alpha mean(iou) + beta mean(rot) + gamma mean(flip).
double stage2_loss(std::span<const double> conf_terms, std::span<const double> iou_terms,
                   std::span<const double> rot_terms, std::span<const double> flip_terms,
                   const LossWeights& w = {});

/// Per-point foreground flags with ground-truth boxes for the foreground points.
struct TargetAssignment {
  std::vector<bool> foreground;
  /// Same length as foreground; set exactly where foreground is true.
  std::vector<std::optional<OrientedBox>> gt_boxes;
  void validate() const;
};

struct Stage1Prediction {
  double cls_logit = 0.0;
  OrientedBox box{0, 0, 0, 1, 1, 1, 0};
};

struct Stage2Prediction {
  double conf_logit = 0.0;
  double flip_logit = 0.0;
  OrientedBox box{0, 0, 0, 1, 1, 1, 0};
};

struct LossBreakdown {
  double total = 0.0;
  double cls_or_conf = 0.0;
  double iou = 0.0;
  double rot = 0.0;
  double flip = 0.0;
  std::size_t foreground = 0;
};

LossBreakdown evaluate_stage1(std::span<const Stage1Prediction> preds,
                              const TargetAssignment& targets, const LossWeights& w = {},
                              const FocalParams& focal = {});

/// Confidence targets come from the IoU with the assigned box; background uses IoU 0.
LossBreakdown evaluate_stage2(std::span<const Stage2Prediction> preds,
                              const TargetAssignment& targets, const LossWeights& w = {},
                              const ConfidenceTarget& target = {});

}  // namespace dvdet
