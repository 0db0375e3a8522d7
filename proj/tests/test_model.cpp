#include <cmath>

#include "deeva/model.hpp"
#include "deeva/rng.hpp"
#include "doctest.h"

using namespace deeva;

namespace {

ModelConfig small_config(HeadMode head = HeadMode::kBoth) {
  ModelConfig cfg;
  cfg.input_size = 64;
  cfg.backbone_channels = {8, 12, 16};
  cfg.subnet_channels = 16;
  cfg.num_classes = 3;
  cfg.class_names = {"worker", "vehicle", "excavator"};
  cfg.scene_class_names = {"empty", "workers_present", "unattended_equipment"};
  cfg.head = head;
  return cfg;
}

Tensor random_image(Rng& rng, int size) {
  Tensor t({1, 3, size, size});
  for (int64_t i = 0; i < t.size(); ++i) t.ptr()[i] = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("per-level output extents follow the anchor grid") {
    Model m = Model::build(small_config(), 1);
    Rng rng(1);
    auto fw = m.forward_detect(random_image(rng, 64));
    REQUIRE(fw.cls_levels.size() == 3);
    const int K = 3;
    for (size_t l = 0; l < 3; ++l) {
      const auto& lvl = m.anchors().levels[l];
      CHECK(fw.cls_levels[l].size() == static_cast<int64_t>(lvl.fh) * lvl.fw * 9 * K);
      CHECK(fw.reg_levels[l].size() == static_cast<int64_t>(lvl.fh) * lvl.fw * 9 * 4);
      // FPN: same channel width everywhere, halving spatial extents
      CHECK(fw.cls_levels[l].dim(1) == 9 * K);
      if (l > 0) {
        CHECK(fw.cls_levels[l - 1].dim(2) == 2 * fw.cls_levels[l].dim(2));
      }
    }
    CHECK(fw.cls_flat.shape == std::vector<int>{static_cast<int>(m.anchors().total()), K});
    CHECK(fw.reg_flat.shape == std::vector<int>{static_cast<int>(m.anchors().total()), 4});
  }

  TEST_CASE("class probabilities live in [0,1]") {
    Model m = Model::build(small_config(), 2);
    Rng rng(2);
    auto fw = m.forward_detect(random_image(rng, 64));
    for (double v : fw.cls_flat.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("same seed builds bit-identical parameters") {
    Model a = Model::build(small_config(), 42);
    Model b = Model::build(small_config(), 42);
    Model c = Model::build(small_config(), 43);
    REQUIRE(a.params().size() == b.params().size());
    bool any_diff_c = false;
    for (size_t i = 0; i < a.params().size(); ++i) {
      CHECK(a.params()[i].value.values() == b.params()[i].value.values());
      if (a.params()[i].value.values() != c.params()[i].value.values()) any_diff_c = true;
    }
    CHECK(any_diff_c);
  }

  TEST_CASE("fresh model predicts the 0.01 class prior") {
    Model m = Model::build(small_config(), 3);
    Rng rng(3);
    auto fw = m.forward_detect(random_image(rng, 64));
    for (double v : fw.cls_flat.values()) {
      CHECK(v > 0.005);
      CHECK(v < 0.015);
    }
  }

  TEST_CASE("forward determinism on a fixed input") {
    Model m = Model::build(small_config(), 4);
    Rng rng(4);
    Tensor img = random_image(rng, 64);
    auto a = m.forward_detect(img);
    auto b = m.forward_detect(img);
    CHECK(a.cls_flat.values() == b.cls_flat.values());
    CHECK(a.reg_flat.values() == b.reg_flat.values());
  }

  TEST_CASE("scene head: logits finite and deterministic; disabled mode rejects") {
    Model m = Model::build(small_config(), 5);
    Rng rng(5);
    Tensor img = random_image(rng, 64);
    Tensor l1 = m.forward_scene(img);
    Tensor l2 = m.forward_scene(img);
    REQUIRE(l1.size() == 3);
    for (double v : l1.values()) CHECK(std::isfinite(v));
    CHECK(l1.values() == l2.values());

    Model det_only = Model::build(small_config(HeadMode::kDetection), 5);
    CHECK_THROWS_AS(det_only.forward_scene(img), std::invalid_argument);

    // zeroed head on a uniform-zero image gives zero logits
    Model z = Model::build(small_config(), 6);
    for (auto& p : z.params()) {
      if (p.name.starts_with("scene_head.")) {
        p.value = Tensor(p.value.shape, 0.0);
      }
    }
    Tensor zeros({1, 3, 64, 64}, 0.0);
    for (double v : z.forward_scene(zeros).values()) CHECK(v == 0.0);
  }

  TEST_CASE("input extent mismatch is rejected") {
    Model m = Model::build(small_config(), 7);
    CHECK_THROWS_AS(m.forward_detect(Tensor({1, 3, 32, 32}, 0.0)), std::invalid_argument);
  }

  TEST_CASE("predict contracts") {
    Model m = Model::build(small_config(), 8);
    Rng rng(8);
    Tensor img = random_image(rng, 64);
    CHECK(m.predict(img, 1.0, 0.5, 100).empty());
    auto dets = m.predict(img, 0.005, 0.5, 10);
    CHECK(dets.size() <= 10);
    for (size_t i = 1; i < dets.size(); ++i) CHECK(dets[i - 1].score >= dets[i].score);
    for (const auto& d : dets) {
      CHECK(d.box.x1 >= 0.0);
      CHECK(d.box.y2 <= 64.0);
    }
  }

  TEST_CASE("checkpoint round trip is bit-exact") {
    Model m = Model::build(small_config(), 9);
    auto bytes = save_checkpoint(m);
    Model r = load_checkpoint(bytes);
    REQUIRE(r.params().size() == m.params().size());
    for (size_t i = 0; i < m.params().size(); ++i) {
      CHECK(m.params()[i].name == r.params()[i].name);
      CHECK(m.params()[i].value.values() == r.params()[i].value.values());
    }
    Rng rng(9);
    Tensor img = random_image(rng, 64);
    CHECK(m.forward_detect(img).cls_flat.values() == r.forward_detect(img).cls_flat.values());
    // save(load(x)) is byte-identical too
    CHECK(save_checkpoint(r) == bytes);
  }

  TEST_CASE("checkpoint failure modes are distinct") {
    Model m = Model::build(small_config(), 10);
    auto bytes = save_checkpoint(m);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 16);
    try {
      load_checkpoint(truncated);
      FAIL("truncated checkpoint loaded");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::kTruncatedPayload);
    }

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
      load_checkpoint(bad_magic);
      FAIL("bad magic accepted");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::kMagic);
    }

    // corrupt a manifest offset so it points past the payload
    const std::string needle = "\"offset\":0";
    std::string text(bytes.begin(), bytes.end());
    const size_t at = text.find(needle);
    REQUIRE(at != std::string::npos);
    const std::string huge = "\"offset\":999999999";
    std::string patched = text.substr(0, at) + huge + text.substr(at + needle.size());
    // keep the header length prefix consistent
    std::vector<uint8_t> corrupted(patched.begin(), patched.end());
    const uint64_t new_len =
        std::bit_cast<uint64_t>(*reinterpret_cast<const uint64_t*>(bytes.data() + 6)) +
        (huge.size() - needle.size());
    for (int i = 0; i < 8; ++i) corrupted[6 + i] = static_cast<uint8_t>((new_len >> (8 * i)) & 0xff);
    try {
      load_checkpoint(corrupted);
      FAIL("bad manifest offset accepted");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::kManifestBounds);
    }
  }

  TEST_CASE("reinit restores the class prior on the final layer") {
    Model m = Model::build(small_config(), 11);
    auto& final_bias = m.param("cls_subnet.final.b");
    final_bias.value = Tensor(final_bias.value.shape, 5.0);
    m.reinit_param("cls_subnet.final.b", 11);
    const double want = -std::log((1.0 - 0.01) / 0.01);
    for (double v : m.param("cls_subnet.final.b").value.values()) {
      CHECK(v == doctest::Approx(want).epsilon(1e-12));
    }
  }
}
