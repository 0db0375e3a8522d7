#include <cmath>

#include "deeva/anchors.hpp"
#include "deeva/rng.hpp"
#include "doctest.h"

using namespace deeva;

TEST_SUITE("anchors") {
  TEST_CASE("single level counts: 16x16 image, stride 8") {
    AnchorConfig cfg;
    cfg.levels = {{8, 32.0}};
    AnchorSet set = generate_pyramid(cfg, 16, 16);
    CHECK(set.total() == 2 * 2 * 9);
    CHECK(set.valid_count() == set.total());
  }

  TEST_CASE("default pyramid on 64x64: 756 anchors, none filtered") {
    AnchorSet set = generate_pyramid(AnchorConfig::defaults(), 64, 64);
    CHECK(set.total() == (64 + 16 + 4) * 9);
    AnchorSet filtered = filter_valid(set, 64, 64);
    CHECK(filtered.valid_count() == filtered.total());
  }

  TEST_CASE("ratio 1 scale 1 anchor is a square of side base_size") {
    AnchorConfig cfg;
    cfg.levels = {{8, 32.0}};
    AnchorSet set = generate_pyramid(cfg, 16, 16);
    // ratios are {0.5, 1, 2}, scales {1, 2^(1/3), 2^(2/3)}; ratio-1 scale-1 is index 3
    const Box& b = set.anchors[3];
    CHECK(b.width() == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(b.height() == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(b.cx() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(b.cy() == doctest::Approx(4.0).epsilon(1e-12));
  }

  TEST_CASE("anchor area depends on scale only") {
    AnchorSet set = generate_pyramid(AnchorConfig::defaults(), 64, 64);
    // within one cell: same scale, different ratio -> same area
    for (int s = 0; s < 3; ++s) {
      const double area0 = set.anchors[static_cast<size_t>(0 * 3 + s)].area();
      const double area1 = set.anchors[static_cast<size_t>(1 * 3 + s)].area();
      const double area2 = set.anchors[static_cast<size_t>(2 * 3 + s)].area();
      CHECK(area0 == doctest::Approx(area1).epsilon(1e-9));
      CHECK(area1 == doctest::Approx(area2).epsilon(1e-9));
      CHECK(area0 == doctest::Approx(32.0 * 32.0 * std::pow(2.0, 2.0 * s / 3.0)).epsilon(1e-9));
    }
  }

  TEST_CASE("an anchor whose center leaves the image is marked invalid") {
    AnchorSet set = generate_pyramid(AnchorConfig::defaults(), 64, 64);
    set.anchors[5] = Box::from_center(-1.0, 5.0, 8.0, 8.0);
    AnchorSet filtered = filter_valid(set, 64, 64);
    CHECK(filtered.valid[5] == 0);
    // idempotent
    AnchorSet again = filter_valid(filtered, 64, 64);
    CHECK(again.valid == filtered.valid);
  }

  TEST_CASE("per-level counts and strictly interior centers over random configs") {
    Rng rng(70);
    for (int trial = 0; trial < 50; ++trial) {
      AnchorConfig cfg;
      int stride = 1 << rng.uniform_int(2, 3);
      for (int l = 0; l < 3; ++l) {
        cfg.levels.push_back({stride, stride * rng.uniform(2.0, 5.0)});
        stride *= 2;
      }
      for (auto& r : cfg.ratios) r = rng.uniform(0.3, 3.0);
      for (auto& s : cfg.scales) s = rng.uniform(0.5, 2.0);
      const int image = cfg.levels.back().stride * static_cast<int>(rng.uniform_int(1, 4));
      AnchorSet set = generate_pyramid(cfg, image, image);
      int64_t expect = 0;
      for (const auto& l : cfg.levels) {
        expect += static_cast<int64_t>(image / l.stride) * (image / l.stride) * 9;
      }
      REQUIRE(set.total() == expect);
      AnchorSet filtered = filter_valid(set, image, image);
      REQUIRE(filtered.valid_count() == filtered.total());
      for (size_t i = 0; i < filtered.anchors.size(); ++i) {
        if (!filtered.valid[i]) continue;
        CHECK(filtered.anchors[i].cx() > 0.0);
        CHECK(filtered.anchors[i].cx() < image);
        CHECK(filtered.anchors[i].cy() > 0.0);
        CHECK(filtered.anchors[i].cy() < image);
      }
    }
  }

  TEST_CASE("generation is deterministic") {
    AnchorSet a = generate_pyramid(AnchorConfig::defaults(), 128, 128);
    AnchorSet b = generate_pyramid(AnchorConfig::defaults(), 128, 128);
    REQUIRE(a.total() == b.total());
    for (size_t i = 0; i < a.anchors.size(); ++i) {
      CHECK(a.anchors[i].x1 == b.anchors[i].x1);
      CHECK(a.anchors[i].y2 == b.anchors[i].y2);
    }
  }

  TEST_CASE("non-divisible extents are rejected") {
    CHECK_THROWS_AS(generate_pyramid(AnchorConfig::defaults(), 60, 64), std::invalid_argument);
  }
}
