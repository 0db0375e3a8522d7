#include "deeva/eval.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace deeva {

std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<GroundTruth>& gts, double iou_thr) {
  std::vector<bool> flags(dets.size(), false);
  std::vector<char> taken(gts.size(), 0);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best = 0.0;
    int best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= iou_thr && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      flags[d] = true;
      taken[static_cast<size_t>(best_g)] = 1;
    }
  }
  return flags;
}

double average_precision(const std::vector<bool>& flags, int total_gt) {
  if (total_gt <= 0) return 0.0;
  // precision at each prefix, then best precision at recall >= i/G per i
  const size_t n = flags.size();
  std::vector<double> prec(n);
  std::vector<int> tp_at(n);
  int tp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (flags[i]) ++tp;
    tp_at[i] = tp;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // suffix max of precision
  std::vector<double> best(n + 1, 0.0);
  for (size_t i = n; i-- > 0;) best[i] = std::max(prec[i], best[i + 1]);
  double ap = 0.0;
  size_t k = 0;
  for (int i = 1; i <= total_gt; ++i) {
    while (k < n && tp_at[k] < i) ++k;
    if (k == n) break;  // recall i/G never reached; contributes zero
    ap += best[k] / total_gt;
  }
  return ap;
}

EvalResult mean_ap(const std::vector<std::vector<Detection>>& dets_per_image,
                   const std::vector<std::vector<GroundTruth>>& gts_per_image,
                   double iou_thr, const std::vector<std::string>& class_names) {
  if (dets_per_image.size() != gts_per_image.size()) {
    throw std::invalid_argument("mean_ap: detection and ground-truth image counts disagree");
  }
  const int k_cls = static_cast<int>(class_names.size());
  EvalResult result;
  result.iou_thr = iou_thr;

  struct Ranked {
    double score;
    size_t image;
    size_t index;  // detection index within its image
    Box box;
  };

  double ap_sum = 0.0;
  int classes_with_gt = 0;
  for (int k = 0; k < k_cls; ++k) {
    // rank this class's detections globally
    std::vector<Ranked> ranked;
    int total_gt = 0;
    for (size_t im = 0; im < dets_per_image.size(); ++im) {
      for (size_t d = 0; d < dets_per_image[im].size(); ++d) {
        if (dets_per_image[im][d].class_id == k) {
          ranked.push_back({dets_per_image[im][d].score, im, d, dets_per_image[im][d].box});
        }
      }
      for (const auto& g : gts_per_image[im])
        if (g.class_id == k) ++total_gt;
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      return std::make_tuple(-a.score, a.image, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
             std::make_tuple(-b.score, b.image, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
    });

    // greedy matching in global rank order, per image
    std::vector<std::vector<char>> taken(gts_per_image.size());
    for (size_t im = 0; im < gts_per_image.size(); ++im) {
      taken[im].assign(gts_per_image[im].size(), 0);
    }
    std::vector<bool> flags(ranked.size(), false);
    for (size_t r = 0; r < ranked.size(); ++r) {
      const auto& gts = gts_per_image[ranked[r].image];
      double best = 0.0;
      int best_g = -1;
      for (size_t g = 0; g < gts.size(); ++g) {
        if (taken[ranked[r].image][g] || gts[g].class_id != k) continue;
        const double v = iou(ranked[r].box, gts[g].box);
        if (v >= iou_thr && v > best) {
          best = v;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) {
        flags[r] = true;
        taken[ranked[r].image][static_cast<size_t>(best_g)] = 1;
      }
    }

    ClassAp ca;
    ca.name = class_names[static_cast<size_t>(k)];
    ca.gt_count = total_gt;
    ca.ap = average_precision(flags, total_gt);
    result.per_class.push_back(ca);
    if (total_gt > 0) {
      ap_sum += ca.ap;
      ++classes_with_gt;
    }
  }
  result.map = classes_with_gt > 0 ? ap_sum / classes_with_gt : 0.0;
  return result;
}

SceneConfusion scene_confusion(const std::vector<int>& preds, const std::vector<int>& truths,
                               int k) {
  if (preds.size() != truths.size()) {
    throw std::invalid_argument("scene_confusion: prediction and truth counts disagree");
  }
  SceneConfusion sc;
  sc.counts.assign(static_cast<size_t>(k), std::vector<int>(static_cast<size_t>(k), 0));
  int correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (truths[i] < 0 || truths[i] >= k || preds[i] < 0 || preds[i] >= k) {
      throw std::invalid_argument("scene_confusion: class id out of range");
    }
    sc.counts[static_cast<size_t>(truths[i])][static_cast<size_t>(preds[i])]++;
    if (preds[i] == truths[i]) ++correct;
  }
  sc.accuracy = preds.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds.size());
  return sc;
}

std::string eval_report_json(const EvalResult& r) {
  nlohmann::json j;
  j["per_class"] = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    j["per_class"].push_back({{"name", c.name}, {"ap", c.ap}, {"gt_count", c.gt_count}});
  }
  j["map"] = r.map;
  j["iou_thr"] = r.iou_thr;
  if (r.has_scene) {
    j["scene_accuracy"] = r.scene_accuracy;
    j["confusion"] = r.confusion;
  }
  return j.dump();
}

}  // namespace deeva
