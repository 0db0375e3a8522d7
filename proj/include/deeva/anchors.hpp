#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "deeva/boxes.hpp"

namespace deeva {

struct AnchorLevel {
  int stride = 0;         // pixels per feature cell
  double base_size = 0.0; // side of the ratio-1 scale-1 anchor
};

// 3 ratios x 3 scales = 9 anchors per feature cell.
struct AnchorConfig {
  std::vector<AnchorLevel> levels;
  std::array<double, 3> ratios{0.5, 1.0, 2.0};  // h/w
  std::array<double, 3> scales{1.0, 1.2599210498948732, 1.5874010519681994};  // 2^(k/3)

  // Strides 8/16/32 with base_size = 4x stride.
  static AnchorConfig defaults();

  void validate() const;
};

// Dense anchors over all pyramid levels, image coordinates, concatenated in
// level order then row-major cell order then (ratio, scale) order.
struct AnchorSet {
  struct Level {
    int stride = 0;
    int fh = 0, fw = 0;
    int64_t offset = 0;  // index of this level's first anchor
  };
  std::vector<Level> levels;
  std::vector<Box> anchors;
  std::vector<uint8_t> valid;  // center inside the image
  int image_w = 0, image_h = 0;

  int64_t total() const { return static_cast<int64_t>(anchors.size()); }
  int64_t valid_count() const;
};

constexpr int kAnchorsPerCell = 9;

AnchorSet generate_pyramid(const AnchorConfig& cfg, int image_w, int image_h);

// Re-applies the center-inside-image rule; idempotent.
AnchorSet filter_valid(AnchorSet set, int image_w, int image_h);

}  // namespace deeva
