#include "deeva/anchors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace deeva {

AnchorConfig AnchorConfig::defaults() {
  AnchorConfig cfg;
  cfg.levels = {{8, 32.0}, {16, 64.0}, {32, 128.0}};
  cfg.scales = {1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
  return cfg;
}

void AnchorConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("anchor config needs at least one level");
  int prev = 0;
  for (const auto& l : levels) {
    if (l.stride <= prev) throw std::invalid_argument("anchor strides must be strictly increasing");
    if (l.base_size <= 0.0) throw std::invalid_argument("anchor base_size must be positive");
    prev = l.stride;
  }
  for (double r : ratios)
    if (r <= 0.0) throw std::invalid_argument("anchor ratios must be positive");
  for (double s : scales)
    if (s <= 0.0) throw std::invalid_argument("anchor scales must be positive");
}

int64_t AnchorSet::valid_count() const {
  int64_t n = 0;
  for (uint8_t v : valid) n += v;
  return n;
}

AnchorSet generate_pyramid(const AnchorConfig& cfg, int image_w, int image_h) {
  cfg.validate();
  if (image_w <= 0 || image_h <= 0) throw std::invalid_argument("image extents must be positive");
  for (const auto& l : cfg.levels) {
    if (image_w % l.stride != 0 || image_h % l.stride != 0) {
      throw std::invalid_argument("image " + std::to_string(image_w) + "x" + std::to_string(image_h) +
                                  " not divisible by stride " + std::to_string(l.stride));
    }
  }

  AnchorSet set;
  set.image_w = image_w;
  set.image_h = image_h;
  for (const auto& l : cfg.levels) {
    AnchorSet::Level lvl;
    lvl.stride = l.stride;
    lvl.fh = image_h / l.stride;
    lvl.fw = image_w / l.stride;
    lvl.offset = set.total();
    set.levels.push_back(lvl);

    // anchor shapes for this level: area = (base_size * scale)^2, ratio = h/w
    double ws[kAnchorsPerCell], hs[kAnchorsPerCell];
    int a = 0;
    for (double r : cfg.ratios) {
      for (double s : cfg.scales) {
        const double side = l.base_size * s;
        ws[a] = side / std::sqrt(r);
        hs[a] = side * std::sqrt(r);
        ++a;
      }
    }

    for (int i = 0; i < lvl.fh; ++i) {
      for (int j = 0; j < lvl.fw; ++j) {
        const double cx = (j + 0.5) * l.stride;
        const double cy = (i + 0.5) * l.stride;
        for (int k = 0; k < kAnchorsPerCell; ++k) {
          set.anchors.push_back(Box::from_center(cx, cy, ws[k], hs[k]));
          const bool ok = cx >= 0.0 && cx < image_w && cy >= 0.0 && cy < image_h;
          set.valid.push_back(ok ? 1 : 0);
        }
      }
    }
  }
  return set;
}

AnchorSet filter_valid(AnchorSet set, int image_w, int image_h) {
  for (size_t i = 0; i < set.anchors.size(); ++i) {
    const Box& b = set.anchors[i];
    const double cx = b.cx(), cy = b.cy();
    set.valid[i] = (cx >= 0.0 && cx < image_w && cy >= 0.0 && cy < image_h) ? 1 : 0;
  }
  return set;
}

}  // namespace deeva
