#include "deeva/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace deeva {

AnchorTargets match_anchors(const AnchorSet& anchors, const std::vector<GroundTruth>& gts,
                            double pos_thr, double neg_thr) {
  if (pos_thr < neg_thr) throw std::invalid_argument("match_anchors requires pos_thr >= neg_thr");
  const int64_t n = anchors.total();
  AnchorTargets t;
  t.labels.assign(static_cast<size_t>(n), AnchorLabel::kNegative);
  t.gt_class.assign(static_cast<size_t>(n), -1);
  t.offsets.assign(static_cast<size_t>(n), BoxOffsets{});

  std::vector<double> best_gt_iou(gts.size(), -1.0);
  std::vector<int64_t> best_gt_anchor(gts.size(), -1);

  for (int64_t i = 0; i < n; ++i) {
    if (!anchors.valid[static_cast<size_t>(i)]) {
      t.labels[static_cast<size_t>(i)] = AnchorLabel::kIgnore;
      continue;
    }
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors.anchors[static_cast<size_t>(i)], gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
      if (v > best_gt_iou[g]) {
        best_gt_iou[g] = v;
        best_gt_anchor[g] = i;
      }
    }
    if (best_gt >= 0 && best >= pos_thr) {
      t.labels[static_cast<size_t>(i)] = AnchorLabel::kPositive;
      t.gt_class[static_cast<size_t>(i)] = gts[static_cast<size_t>(best_gt)].class_id;
      t.offsets[static_cast<size_t>(i)] =
          encode_offsets(gts[static_cast<size_t>(best_gt)].box, anchors.anchors[static_cast<size_t>(i)]);
    } else if (best >= neg_thr) {
      t.labels[static_cast<size_t>(i)] = AnchorLabel::kIgnore;
    }
  }

  // every ground truth keeps its single best anchor
  for (size_t g = 0; g < gts.size(); ++g) {
    const int64_t a = best_gt_anchor[g];
    if (a < 0) continue;
    t.labels[static_cast<size_t>(a)] = AnchorLabel::kPositive;
    t.gt_class[static_cast<size_t>(a)] = gts[g].class_id;
    t.offsets[static_cast<size_t>(a)] = encode_offsets(gts[g].box, anchors.anchors[static_cast<size_t>(a)]);
  }

  for (auto l : t.labels)
    if (l == AnchorLabel::kPositive) ++t.num_positive;
  return t;
}

namespace {

double clamp_prob(double p) { return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp); }

}  // namespace

double focal_loss(double p, int y, const FocalLossParams& params) {
  const double pc = clamp_prob(p);
  if (y == 1) return -params.alpha * std::pow(1.0 - pc, params.gamma) * std::log(pc);
  return -(1.0 - params.alpha) * std::pow(pc, params.gamma) * std::log(1.0 - pc);
}

double focal_loss_grad(double p, int y, const FocalLossParams& params) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;  // clamped flat
  const double a = params.alpha, g = params.gamma;
  if (y == 1) {
    double d = -a * std::pow(1.0 - p, g) / p;
    if (g > 0.0) d += a * g * std::pow(1.0 - p, g - 1.0) * std::log(p);
    return d;
  }
  double d = (1.0 - a) * std::pow(p, g) / (1.0 - p);
  if (g > 0.0) d += -(1.0 - a) * g * std::pow(p, g - 1.0) * std::log(1.0 - p);
  return d;
}

double l1_loss(const BoxOffsets& pred, const BoxOffsets& target) {
  return std::fabs(pred.tx - target.tx) + std::fabs(pred.ty - target.ty) +
         std::fabs(pred.tw - target.tw) + std::fabs(pred.th - target.th);
}

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// stable -log softmax[k]
double ce_value(const double* z, int64_t k_count, int true_class) {
  double m = z[0];
  for (int64_t i = 1; i < k_count; ++i) m = std::max(m, z[i]);
  double lse = 0.0;
  for (int64_t i = 0; i < k_count; ++i) lse += std::exp(z[i] - m);
  return std::log(lse) - (z[true_class] - m);
}

}  // namespace

double cross_entropy(const Tensor& logits, int true_class) {
  const int64_t k = logits.size();
  if (k < 2) throw std::invalid_argument("cross_entropy needs at least 2 classes");
  if (true_class < 0 || true_class >= k) {
    throw std::invalid_argument("cross_entropy class " + std::to_string(true_class) +
                                " out of range for K=" + std::to_string(k));
  }
  return ce_value(logits.ptr(), k, true_class);
}

Tensor cross_entropy_loss(const Tensor& logits, int true_class) {
  const double v = cross_entropy(logits, true_class);
  Tensor out({1}, {v});
  if (logits.node >= 0) {
    GradientTape* tape = logits.tape;
    const int parent = logits.node;
    const int64_t k = logits.size();
    auto saved = logits.data;
    out.tape = tape;
    out.node = tape->add_node(1, {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      const double* z = saved->data();
      double m = z[0];
      for (int64_t i = 1; i < k; ++i) m = std::max(m, z[i]);
      double lse = 0.0;
      for (int64_t i = 0; i < k; ++i) lse += std::exp(z[i] - m);
      for (int64_t i = 0; i < k; ++i) {
        const double soft = std::exp(z[i] - m) / lse;
        gp[static_cast<size_t>(i)] += g[0] * (soft - (i == true_class ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor detection_loss(const Tensor& cls_probs, const Tensor& reg_preds,
                      const AnchorTargets& targets, const FocalLossParams& params) {
  if (cls_probs.shape.size() != 2 || reg_preds.shape.size() != 2 || reg_preds.dim(1) != 4) {
    throw std::invalid_argument("detection_loss expects cls [A,K] and reg [A,4], got " +
                                shape_str(cls_probs.shape) + " and " + shape_str(reg_preds.shape));
  }
  const int64_t a_count = cls_probs.dim(0);
  const int k_count = cls_probs.dim(1);
  if (a_count != targets.total() || reg_preds.dim(0) != a_count) {
    throw std::invalid_argument("detection_loss anchor extents disagree: cls " +
                                shape_str(cls_probs.shape) + ", reg " + shape_str(reg_preds.shape) +
                                ", targets " + std::to_string(targets.total()));
  }

  const double norm = 1.0 / std::max(1, targets.num_positive);
  const double* cp = cls_probs.ptr();
  const double* rp = reg_preds.ptr();
  double total = 0.0;
  for (int64_t a = 0; a < a_count; ++a) {
    const AnchorLabel lab = targets.labels[static_cast<size_t>(a)];
    if (lab == AnchorLabel::kIgnore) continue;
    const int pos_class = lab == AnchorLabel::kPositive ? targets.gt_class[static_cast<size_t>(a)] : -1;
    for (int k = 0; k < k_count; ++k) {
      total += focal_loss(cp[a * k_count + k], k == pos_class ? 1 : 0, params);
    }
    if (lab == AnchorLabel::kPositive) {
      const BoxOffsets pred{rp[a * 4 + 0], rp[a * 4 + 1], rp[a * 4 + 2], rp[a * 4 + 3]};
      total += l1_loss(pred, targets.offsets[static_cast<size_t>(a)]);
    }
  }
  Tensor out({1}, {total * norm});

  GradientTape* tape = nullptr;
  if (cls_probs.node >= 0) tape = cls_probs.tape;
  if (reg_preds.node >= 0) {
    if (tape && reg_preds.tape != tape) throw std::invalid_argument("inputs recorded on different tapes");
    tape = reg_preds.tape;
  }
  if (tape) {
    const int cls_node = cls_probs.node, reg_node = reg_preds.node;
    auto cls_data = cls_probs.data;
    auto reg_data = reg_preds.data;
    auto tgt = std::make_shared<AnchorTargets>(targets);
    const FocalLossParams fp = params;
    std::vector<int> parents;
    for (int p : {cls_node, reg_node})
      if (p >= 0) parents.push_back(p);
    out.tape = tape;
    out.node = tape->add_node(1, parents, [=](const std::vector<double>& g, GradientTape& t) {
      const double up = g[0] * norm;
      const double* c = cls_data->data();
      const double* r = reg_data->data();
      for (int64_t a = 0; a < a_count; ++a) {
        const AnchorLabel lab = tgt->labels[static_cast<size_t>(a)];
        if (lab == AnchorLabel::kIgnore) continue;
        const int pos_class = lab == AnchorLabel::kPositive ? tgt->gt_class[static_cast<size_t>(a)] : -1;
        if (cls_node >= 0) {
          auto& gc = t.grad_slot(cls_node);
          for (int k = 0; k < k_count; ++k) {
            gc[static_cast<size_t>(a * k_count + k)] +=
                up * focal_loss_grad(c[a * k_count + k], k == pos_class ? 1 : 0, fp);
          }
        }
        if (reg_node >= 0 && lab == AnchorLabel::kPositive) {
          auto& gr = t.grad_slot(reg_node);
          const BoxOffsets& tg = tgt->offsets[static_cast<size_t>(a)];
          gr[static_cast<size_t>(a * 4 + 0)] += up * sign0(r[a * 4 + 0] - tg.tx);
          gr[static_cast<size_t>(a * 4 + 1)] += up * sign0(r[a * 4 + 1] - tg.ty);
          gr[static_cast<size_t>(a * 4 + 2)] += up * sign0(r[a * 4 + 2] - tg.tw);
          gr[static_cast<size_t>(a * 4 + 3)] += up * sign0(r[a * 4 + 3] - tg.th);
        }
      }
    });
  }
  return out;
}

}  // namespace deeva
