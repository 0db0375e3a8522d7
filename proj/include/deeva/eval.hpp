#pragma once

#include <string>
#include <vector>

#include "deeva/boxes.hpp"

namespace deeva {

// Greedy TP/FP assignment. Detections must already be in rank order (score
// descending). Each ground truth is matched at most once; a detection takes
// the highest-IoU unmatched same-class gt with IoU >= iou_thr.
std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<GroundTruth>& gts, double iou_thr);

// Area under the monotone-smoothed precision-recall curve. flags are TP/FP in
// rank order; total_gt == 0 yields 0.
double average_precision(const std::vector<bool>& flags, int total_gt);

struct ClassAp {
  std::string name;
  double ap = 0.0;
  int gt_count = 0;
};

struct EvalResult {
  std::vector<ClassAp> per_class;
  double map = 0.0;         // mean over classes with >= 1 gt
  double iou_thr = 0.5;
  bool has_scene = false;
  double scene_accuracy = 0.0;
  std::vector<std::vector<int>> confusion;  // [truth][pred]
};

// Per-image detections vs per-image ground truths; class ids index
// class_names. Ranking ties broken by (image asc, x1, y1, x2, y2).
EvalResult mean_ap(const std::vector<std::vector<Detection>>& dets_per_image,
                   const std::vector<std::vector<GroundTruth>>& gts_per_image,
                   double iou_thr, const std::vector<std::string>& class_names);

struct SceneConfusion {
  double accuracy = 0.0;
  std::vector<std::vector<int>> counts;
};

SceneConfusion scene_confusion(const std::vector<int>& preds, const std::vector<int>& truths, int k);

std::string eval_report_json(const EvalResult& r);

}  // namespace deeva
