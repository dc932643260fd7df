#include "dvdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dvdet/iou.hpp"

namespace dvdet {

namespace {

constexpr double kLogFloor = 1e-12;

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// log(sigmoid(x)) computed without overflow.
double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

double ConfidenceTarget::operator()(double iou) const {
  return std::clamp(slope * iou + offset, 0.0, 1.0);
}

double sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

double bce_with_logit(double logit, double target) {
  const double lp = std::max(log_sigmoid(logit), std::log(kLogFloor));
  const double lq = std::max(log_sigmoid(-logit), std::log(kLogFloor));
  const double loss = -(target * lp + (1.0 - target) * lq);
  return std::max(loss, 0.0);
}

double focal_loss(double logit, bool target, const FocalParams& params) {
  const double p = sigmoid(logit);
  const double pt = target ? p : 1.0 - p;
  const double alpha_t = target ? params.alpha : 1.0 - params.alpha;
  const double log_pt = std::max(target ? log_sigmoid(logit) : log_sigmoid(-logit),
                                 std::log(kLogFloor));
  return -alpha_t * std::pow(1.0 - pt, params.gamma) * log_pt;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double rot_loss(double r_p, double r_g) { return smooth_l1(std::sin(r_p - r_g)); }

double rot_loss_grad(double r_p, double r_g) {
  const double s = std::sin(r_p - r_g);
  const double c = std::cos(r_p - r_g);
  const double ds = std::abs(s) < 1.0 ? s : (s > 0.0 ? 1.0 : -1.0);
  return ds * c;
}

bool flip_label(double r_p, double r_g) { return std::cos(r_p - r_g) < 0.0; }

double flip_loss(double flip_logit, double r_p, double r_g) {
  return bce_with_logit(flip_logit, flip_label(r_p, r_g) ? 1.0 : 0.0);
}

double conf_loss(double conf_logit, double iou_with_gt, const ConfidenceTarget& target) {
  if (!(iou_with_gt >= 0.0 && iou_with_gt <= 1.0)) {
    throw std::invalid_argument("conf_loss: IoU must lie in [0, 1]");
  }
  return bce_with_logit(conf_logit, target(iou_with_gt));
}

double stage1_loss(std::span<const double> cls_terms, std::span<const double> iou_terms,
                   std::span<const double> rot_terms, const LossWeights& w) {
  return mean(cls_terms) + w.alpha * mean(iou_terms) + w.beta * mean(rot_terms);
}

double stage2_loss(std::span<const double> conf_terms, std::span<const double> iou_terms,
                   std::span<const double> rot_terms, std::span<const double> flip_terms,
                   const LossWeights& w) {
  return mean(conf_terms) + w.alpha * mean(iou_terms) + w.beta * mean(rot_terms) +
         w.gamma * mean(flip_terms);
}

void TargetAssignment::validate() const {
  if (foreground.size() != gt_boxes.size()) {
    throw std::invalid_argument("TargetAssignment: flag and box lists differ in length");
  }
  for (std::size_t i = 0; i < foreground.size(); ++i) {
    if (foreground[i] != gt_boxes[i].has_value()) {
      throw std::invalid_argument("TargetAssignment: box must be present exactly for foreground");
    }
  }
}

LossBreakdown evaluate_stage1(std::span<const Stage1Prediction> preds,
                              const TargetAssignment& targets, const LossWeights& w,
                              const FocalParams& focal) {
  targets.validate();
  if (preds.size() != targets.foreground.size()) {
    throw std::invalid_argument("evaluate_stage1: prediction and target counts differ");
  }
  std::vector<double> cls, iou, rot;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cls.push_back(focal_loss(preds[i].cls_logit, targets.foreground[i], focal));
    if (!targets.foreground[i]) continue;
    const OrientedBox& gt = *targets.gt_boxes[i];
    iou.push_back(iou3d(preds[i].box, gt).loss);
    rot.push_back(rot_loss(preds[i].box.r(), gt.r()));
  }
  LossBreakdown out;
  out.cls_or_conf = mean(cls);
  out.iou = mean(iou);
  out.rot = mean(rot);
  out.foreground = iou.size();
  out.total = stage1_loss(cls, iou, rot, w);
  return out;
}

LossBreakdown evaluate_stage2(std::span<const Stage2Prediction> preds,
                              const TargetAssignment& targets, const LossWeights& w,
                              const ConfidenceTarget& target) {
  targets.validate();
  if (preds.size() != targets.foreground.size()) {
    throw std::invalid_argument("evaluate_stage2: prediction and target counts differ");
  }
  std::vector<double> conf, iou, rot, flip;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double overlap = 0.0;
    if (targets.foreground[i]) {
      const OrientedBox& gt = *targets.gt_boxes[i];
      const IouResult r = iou3d(preds[i].box, gt);
      overlap = r.iou3d;
      iou.push_back(r.loss);
      rot.push_back(rot_loss(preds[i].box.r(), gt.r()));
      flip.push_back(flip_loss(preds[i].flip_logit, preds[i].box.r(), gt.r()));
    }
    conf.push_back(conf_loss(preds[i].conf_logit, overlap, target));
  }
  LossBreakdown out;
  out.cls_or_conf = mean(conf);
  out.iou = mean(iou);
  out.rot = mean(rot);
  out.flip = mean(flip);
  out.foreground = iou.size();
  out.total = stage2_loss(conf, iou, rot, flip, w);
  return out;
}

}  // namespace dvdet
