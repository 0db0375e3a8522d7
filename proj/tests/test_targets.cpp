#include <cmath>

#include "deeva/rng.hpp"
#include "deeva/targets.hpp"
#include "doctest.h"

using namespace deeva;

namespace {

AnchorSet three_anchor_set(const std::vector<Box>& boxes) {
  AnchorSet set;
  set.image_w = 100;
  set.image_h = 100;
  set.levels = {{8, static_cast<int>(boxes.size()), 1, 0}};
  set.anchors = boxes;
  set.valid.assign(boxes.size(), 1);
  return set;
}

}  // namespace

TEST_SUITE("targets") {
  TEST_CASE("match_anchors: no objects makes every valid anchor negative") {
    AnchorSet set = three_anchor_set({{0, 0, 8, 8}, {8, 0, 16, 8}, {0, 8, 8, 16}});
    AnchorTargets t = match_anchors(set, {}, 0.5, 0.4);
    for (auto l : t.labels) CHECK(l == AnchorLabel::kNegative);
    CHECK(t.num_positive == 0);
  }

  TEST_CASE("match_anchors: anchor identical to a gt is positive") {
    AnchorSet set = three_anchor_set({{10, 10, 20, 20}, {50, 50, 60, 60}, {0, 0, 4, 4}});
    AnchorTargets t = match_anchors(set, {{{10, 10, 20, 20}, 2}}, 1.0, 0.4);
    CHECK(t.labels[0] == AnchorLabel::kPositive);
    CHECK(t.gt_class[0] == 2);
    CHECK(t.offsets[0].tx == 0.0);
    CHECK(t.offsets[0].tw == 0.0);
  }

  TEST_CASE("match_anchors: the threshold band sorts pos/ignore/neg") {
    // aligned boxes tuned to IoU 0.55, 0.45, 0.2 against the gt
    const Box gt{0, 0, 100, 10};
    Box a{0, 0, 55, 10};    // IoU 0.55
    Box b{0, 0, 45, 10};    // IoU 0.45
    Box c{0, 0, 20, 10};    // IoU 0.2
    CHECK(iou(a, gt) == doctest::Approx(0.55));
    CHECK(iou(b, gt) == doctest::Approx(0.45));
    CHECK(iou(c, gt) == doctest::Approx(0.20));
    AnchorSet set = three_anchor_set({a, b, c});
    AnchorTargets t = match_anchors(set, {{gt, 0}}, 0.5, 0.4);
    CHECK(t.labels[0] == AnchorLabel::kPositive);
    CHECK(t.labels[1] == AnchorLabel::kIgnore);
    CHECK(t.labels[2] == AnchorLabel::kNegative);
  }

  TEST_CASE("match_anchors: every gt keeps its single best anchor") {
    // none of the anchors reach pos_thr, still one positive per gt
    AnchorSet set = three_anchor_set({{0, 0, 30, 10}, {40, 0, 80, 10}, {0, 40, 10, 80}});
    std::vector<GroundTruth> gts = {{{0, 0, 100, 10}, 0}, {{0, 30, 10, 100}, 1}};
    AnchorTargets t = match_anchors(set, gts, 0.9, 0.4);
    CHECK(t.num_positive >= 2);
    CHECK(t.labels[0] == AnchorLabel::kPositive);
    CHECK(t.gt_class[0] == 0);
    CHECK(t.labels[2] == AnchorLabel::kPositive);
    CHECK(t.gt_class[2] == 1);
  }

  TEST_CASE("invalid anchors are ignored") {
    AnchorSet set = three_anchor_set({{0, 0, 8, 8}, {8, 0, 16, 8}, {0, 8, 8, 16}});
    set.valid[1] = 0;
    AnchorTargets t = match_anchors(set, {}, 0.5, 0.4);
    CHECK(t.labels[1] == AnchorLabel::kIgnore);
  }

  TEST_CASE("focal loss anchor values from the loss definition") {
    // gamma 0, alpha 1 unreachable (alpha in (0,1)); scale by alpha instead
    FocalLossParams ce_like{0.5, 0.0};
    CHECK(focal_loss(0.5, 1, ce_like) ==
          doctest::Approx(0.5 * 0.693147180559945).epsilon(1e-12));
    FocalLossParams p{0.25, 2.0};
    CHECK(focal_loss(0.9, 1, p) == doctest::Approx(2.63401289e-4).epsilon(1e-6));
    CHECK(focal_loss(0.1, 0, p) == doctest::Approx(7.90204e-4).epsilon(1e-5));
  }

  TEST_CASE("gamma 0 reduces focal loss to alpha-weighted cross entropy") {
    Rng rng(13);
    for (int i = 0; i < 10000; ++i) {
      const double p = rng.uniform(1e-6, 1.0 - 1e-6);
      const double alpha = rng.uniform(0.05, 0.95);
      const int y = rng.uniform() < 0.5 ? 1 : 0;
      FocalLossParams params{alpha, 0.0};
      const double fl = focal_loss(p, y, params);
      const double pc = std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
      const double ce = y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
      const double want = (y == 1 ? alpha : 1.0 - alpha) * ce;
      REQUIRE(std::fabs(fl - want) < 1e-12);
    }
  }

  TEST_CASE("modulating factor never exceeds cross entropy") {
    Rng rng(14);
    for (double gamma : {1.0, 2.0, 5.0}) {
      // alpha -> 1 limit checked through the ratio (1-p)^gamma directly
      FocalLossParams params{0.999999, gamma};
      for (int i = 0; i < 3000; ++i) {
        const double p = rng.uniform(1e-5, 1.0 - 1e-5);
        const double ce = -std::log(std::min(std::max(p, kProbClamp), 1.0 - kProbClamp));
        REQUIRE(focal_loss(p, 1, params) <= params.alpha * ce + 1e-15);
      }
    }
  }

  TEST_CASE("focal loss is monotone in p") {
    FocalLossParams p{0.25, 2.0};
    double prev_pos = focal_loss(0.001, 1, p);
    double prev_neg = focal_loss(0.001, 0, p);
    for (double q = 0.01; q < 1.0; q += 0.01) {
      const double pos = focal_loss(q, 1, p);
      const double neg = focal_loss(q, 0, p);
      CHECK(pos < prev_pos);   // decreasing for y=1
      CHECK(neg > prev_neg);   // increasing for y=0
      prev_pos = pos;
      prev_neg = neg;
    }
  }

  TEST_CASE("l1_loss basics") {
    BoxOffsets a{1, 2, 3, 4};
    CHECK(l1_loss(a, a) == 0.0);
    BoxOffsets b{1.1, 1.8, 3.0, 4.3};
    CHECK(l1_loss(b, a) == doctest::Approx(0.6).epsilon(1e-12));
  }

  TEST_CASE("cross entropy values and shift invariance") {
    CHECK(cross_entropy(Tensor({4}, {1.0, 1.0, 1.0, 1.0}), 2) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(cross_entropy(Tensor({2}, {10.0, 0.0}), 0) == doctest::Approx(4.54e-5).epsilon(1e-2));
    Rng rng(15);
    for (int i = 0; i < 100; ++i) {
      Tensor z({5});
      for (int k = 0; k < 5; ++k) z.ptr()[k] = rng.uniform(-5, 5);
      Tensor zs({5});
      const double c = rng.uniform(-100, 100);
      for (int k = 0; k < 5; ++k) zs.ptr()[k] = z.ptr()[k] + c;
      const int cls = static_cast<int>(rng.uniform_int(0, 4));
      REQUIRE(std::fabs(cross_entropy(z, cls) - cross_entropy(zs, cls)) < 1e-12);
    }
    CHECK_THROWS_AS(cross_entropy(Tensor({3}, 0.0), 3), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(Tensor({1}, 0.0), 0), std::invalid_argument);
  }

  TEST_CASE("detection loss limit cases") {
    AnchorTargets t;
    t.labels = {AnchorLabel::kNegative, AnchorLabel::kNegative};
    t.gt_class = {-1, -1};
    t.offsets.resize(2);
    FocalLossParams p{0.25, 2.0};
    // perfectly scored negatives at the clamp floor
    Tensor cls({2, 2}, kProbClamp);
    Tensor reg({2, 4}, 0.0);
    CHECK(detection_loss(cls, reg, t, p).scalar() < 1e-10);

    // one perfect positive
    AnchorTargets t2;
    t2.labels = {AnchorLabel::kPositive, AnchorLabel::kNegative};
    t2.gt_class = {1, -1};
    t2.offsets = {{0.1, -0.2, 0.3, 0.0}, {}};
    t2.num_positive = 1;
    Tensor cls2({2, 2}, {kProbClamp, 1.0 - kProbClamp, kProbClamp, kProbClamp});
    Tensor reg2({2, 4}, {0.1, -0.2, 0.3, 0.0, 0, 0, 0, 0});
    CHECK(detection_loss(cls2, reg2, t2, p).scalar() < 1e-10);
  }

  TEST_CASE("detection loss is invariant under consistent anchor permutation") {
    Rng rng(16);
    const int a_count = 20, k_count = 3;
    AnchorTargets t;
    t.labels.resize(a_count);
    t.gt_class.assign(a_count, -1);
    t.offsets.resize(a_count);
    Tensor cls({a_count, k_count});
    Tensor reg({a_count, 4});
    for (int a = 0; a < a_count; ++a) {
      const double pick = rng.uniform();
      t.labels[a] = pick < 0.3   ? AnchorLabel::kPositive
                    : pick < 0.6 ? AnchorLabel::kNegative
                                 : AnchorLabel::kIgnore;
      if (t.labels[a] == AnchorLabel::kPositive) {
        t.gt_class[a] = static_cast<int>(rng.uniform_int(0, k_count - 1));
        t.offsets[a] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                        rng.uniform(-1, 1)};
        ++t.num_positive;
      }
      for (int k = 0; k < k_count; ++k) cls.ptr()[a * k_count + k] = rng.uniform(0.05, 0.95);
      for (int c = 0; c < 4; ++c) reg.ptr()[a * 4 + c] = rng.uniform(-1, 1);
    }
    const double base = detection_loss(cls, reg, t, {0.25, 2.0}).scalar();

    std::vector<int> perm(a_count);
    for (int i = 0; i < a_count; ++i) perm[i] = i;
    rng.shuffle(perm);
    AnchorTargets pt;
    pt.labels.resize(a_count);
    pt.gt_class.resize(a_count);
    pt.offsets.resize(a_count);
    pt.num_positive = t.num_positive;
    Tensor pcls({a_count, k_count});
    Tensor preg({a_count, 4});
    for (int i = 0; i < a_count; ++i) {
      pt.labels[i] = t.labels[perm[i]];
      pt.gt_class[i] = t.gt_class[perm[i]];
      pt.offsets[i] = t.offsets[perm[i]];
      for (int k = 0; k < k_count; ++k) pcls.ptr()[i * k_count + k] = cls.ptr()[perm[i] * k_count + k];
      for (int c = 0; c < 4; ++c) preg.ptr()[i * 4 + c] = reg.ptr()[perm[i] * 4 + c];
    }
    const double permuted = detection_loss(pcls, preg, pt, {0.25, 2.0}).scalar();
    CHECK(base == doctest::Approx(permuted).epsilon(1e-12));
  }

  TEST_CASE("detection loss rejects misaligned extents") {
    AnchorTargets t;
    t.labels = {AnchorLabel::kNegative};
    t.gt_class = {-1};
    t.offsets.resize(1);
    CHECK_THROWS_AS(detection_loss(Tensor({2, 3}, 0.5), Tensor({2, 4}, 0.0), t, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(detection_loss(Tensor({1, 3}, 0.5), Tensor({1, 3}, 0.0), t, {}),
                    std::invalid_argument);
  }
}
