#pragma once

#include <optional>
#include <vector>

namespace deeva {

// Axis-aligned pixel rectangle, corners stored, strictly positive area.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
};

// Center shifts in anchor width/height units plus log size ratios.
struct BoxOffsets {
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct GroundTruth {
  Box box;
  int class_id = 0;
};

double iou(const Box& a, const Box& b);

BoxOffsets encode_offsets(const Box& gt, const Box& anchor);
Box decode_offsets(const BoxOffsets& off, const Box& anchor);

// Intersection with [0,width] x [0,height]; nullopt when degenerate.
std::optional<Box> clip_to_image(const Box& b, double width, double height);

// Greedy per-class suppression. Ties broken by (score desc, class asc,
// x1 asc, y1 asc); output sorted the same way.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

}  // namespace deeva
