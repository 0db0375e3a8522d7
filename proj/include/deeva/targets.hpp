#pragma once

#include <cstdint>
#include <vector>

#include "deeva/anchors.hpp"
#include "deeva/boxes.hpp"
#include "deeva/tensor.hpp"

namespace deeva {

struct FocalLossParams {
  double alpha = 0.25;  // in (0,1)
  double gamma = 2.0;   // >= 0
};

enum class AnchorLabel : uint8_t { kNegative = 0, kPositive = 1, kIgnore = 2 };

// One entry per anchor of the AnchorSet it was built from. Invalid anchors
// are marked ignore and contribute to no loss.
struct AnchorTargets {
  std::vector<AnchorLabel> labels;
  std::vector<int> gt_class;         // matched class for positives, -1 otherwise
  std::vector<BoxOffsets> offsets;   // defined for positives
  int num_positive = 0;

  int64_t total() const { return static_cast<int64_t>(labels.size()); }
};

// Max-IoU assignment with a pos/neg threshold band; each ground truth's
// single best anchor is forced positive so every object has a learner.
AnchorTargets match_anchors(const AnchorSet& anchors, const std::vector<GroundTruth>& gts,
                            double pos_thr, double neg_thr);

// Probabilities are clamped to [kProbClamp, 1-kProbClamp] before logs.
constexpr double kProbClamp = 1e-7;

double focal_loss(double p, int y, const FocalLossParams& params);
// d(focal_loss)/dp at the clamped point; 0 where the clamp is active.
double focal_loss_grad(double p, int y, const FocalLossParams& params);

// Sum of absolute component differences; subgradient at 0 taken as 0.
double l1_loss(const BoxOffsets& pred, const BoxOffsets& target);

// -log softmax(logits)[true_class], max-subtracted.
double cross_entropy(const Tensor& logits, int true_class);
// Tape-recorded variant used for training the scene head.
Tensor cross_entropy_loss(const Tensor& logits, int true_class);

// Focal classification + L1 regression over anchor-aligned predictions.
// cls_probs is [A,K] sigmoid outputs, reg_preds is [A,4]; rows follow the
// anchor ordering of the AnchorTargets. Result is
// (sum focal over non-ignored anchors and classes + sum L1 over positives)
// / max(1, #positives), recorded on the tape when the inputs are.
Tensor detection_loss(const Tensor& cls_probs, const Tensor& reg_preds,
                      const AnchorTargets& targets, const FocalLossParams& params);

}  // namespace deeva
