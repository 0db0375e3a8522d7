#include <algorithm>
#include <cmath>

#include "deeva/boxes.hpp"
#include "deeva/rng.hpp"
#include "doctest.h"

using namespace deeva;

namespace {

// independent O(n^2) suppression used as the oracle
std::vector<Detection> nms_reference(std::vector<Detection> dets, double thr) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
    if (a.box.y2 != b.box.y2) return a.box.y2 < b.box.y2;
    return a.box.x2 < b.box.x2;
  });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

Box random_box(Rng& rng, double extent) {
  const double x1 = rng.uniform(0.0, extent - 2.0);
  const double y1 = rng.uniform(0.0, extent - 2.0);
  return {x1, y1, x1 + rng.uniform(1.0, extent - x1), y1 + rng.uniform(1.0, extent - y1)};
}

bool same_dets(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].class_id != b[i].class_id || a[i].score != b[i].score ||
        a[i].box.x1 != b[i].box.x1 || a[i].box.y1 != b[i].box.y1 ||
        a[i].box.x2 != b[i].box.x2 || a[i].box.y2 != b[i].box.y2)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("boxes") {
  TEST_CASE("iou anchor values") {
    Box b{1, 1, 4, 5};
    CHECK(iou(b, b) == 1.0);
    CHECK(iou({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
    CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  }

  TEST_CASE("iou symmetry and bounds over random pairs") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
      Box a = random_box(rng, 50.0), b = random_box(rng, 50.0);
      const double v = iou(a, b);
      CHECK(v == iou(b, a));
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("encode_offsets hand values") {
    Box anchor = Box::from_center(10, 10, 4, 4);
    CHECK(encode_offsets(anchor, anchor).tx == 0.0);
    CHECK(encode_offsets(anchor, anchor).tw == 0.0);
    Box gt = Box::from_center(12, 10, 8, 4);
    BoxOffsets off = encode_offsets(gt, anchor);
    CHECK(off.tx == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(off.ty == 0.0);
    CHECK(off.tw == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(off.th == 0.0);
  }

  TEST_CASE("decode inverts encode for the hand example") {
    Box anchor = Box::from_center(10, 10, 4, 4);
    Box back = decode_offsets({0.5, 0.0, std::log(2.0), 0.0}, anchor);
    CHECK(back.cx() == doctest::Approx(12.0).epsilon(1e-12));
    CHECK(back.cy() == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(back.width() == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(back.height() == doctest::Approx(4.0).epsilon(1e-12));
    Box same = decode_offsets({}, anchor);
    CHECK(same.x1 == anchor.x1);
    CHECK(same.y2 == anchor.y2);
  }

  TEST_CASE("encode/decode round trip under 1e-9 on 10k random pairs") {
    Rng rng(9);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      Box gt = random_box(rng, 100.0);
      Box anchor = random_box(rng, 100.0);
      Box back = decode_offsets(encode_offsets(gt, anchor), anchor);
      worst = std::max({worst, std::fabs(back.x1 - gt.x1), std::fabs(back.y1 - gt.y1),
                        std::fabs(back.x2 - gt.x2), std::fabs(back.y2 - gt.y2)});
    }
    CHECK(worst < 1e-9);
  }

  TEST_CASE("clip_to_image") {
    CHECK(clip_to_image({2, 2, 5, 5}, 10, 10)->x1 == 2.0);
    auto clipped = clip_to_image({-5, -5, 3, 3}, 10, 10);
    REQUIRE(clipped.has_value());
    CHECK(clipped->x1 == 0.0);
    CHECK(clipped->y1 == 0.0);
    CHECK(clipped->x2 == 3.0);
    CHECK(!clip_to_image({11, 11, 15, 15}, 10, 10).has_value());
  }

  TEST_CASE("nms walkthrough: threshold straddles the overlap") {
    // two same-class boxes at IoU 0.6
    Box a{0, 0, 10, 10};
    Box b{0, 2.5, 10, 12.5};
    CHECK(iou(a, b) == doctest::Approx(0.6).epsilon(1e-12));
    std::vector<Detection> dets = {{a, 0, 0.9}, {b, 0, 0.8}};
    CHECK(nms(dets, 0.5).size() == 1);
    CHECK(nms(dets, 0.7).size() == 2);
    CHECK(nms({dets[0]}, 0.5).size() == 1);
    CHECK(nms({}, 0.5).empty());
  }

  TEST_CASE("nms keeps overlapping boxes of different classes") {
    Box a{0, 0, 10, 10};
    std::vector<Detection> dets = {{a, 0, 0.9}, {a, 1, 0.8}};
    CHECK(nms(dets, 0.5).size() == 2);
  }

  TEST_CASE("nms equals the O(n^2) oracle over 1000 random instances") {
    Rng rng(17);
    for (int inst = 0; inst < 1000; ++inst) {
      const int n = static_cast<int>(rng.uniform_int(0, 12));
      std::vector<Detection> dets;
      for (int i = 0; i < n; ++i) {
        dets.push_back({random_box(rng, 30.0), static_cast<int>(rng.uniform_int(0, 2)),
                        rng.uniform(0.0, 1.0)});
      }
      const double thr = rng.uniform(0.2, 0.8);
      auto got = nms(dets, thr);
      auto want = nms_reference(dets, thr);
      REQUIRE(same_dets(got, want));

      // permutation invariance, and that kept boxes obey the threshold
      Rng perm(inst);
      perm.shuffle(dets);
      REQUIRE(same_dets(nms(dets, thr), want));
      for (size_t i = 0; i < got.size(); ++i) {
        for (size_t j = i + 1; j < got.size(); ++j) {
          if (got[i].class_id == got[j].class_id) {
            CHECK(iou(got[i].box, got[j].box) <= thr);
          }
        }
      }
    }
  }

  TEST_CASE("nms rejects scores outside [0,1]") {
    CHECK_THROWS_AS(nms({{Box{0, 0, 1, 1}, 0, 1.5}}, 0.5), std::invalid_argument);
  }
}
