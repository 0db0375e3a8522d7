#include "deeva/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace deeva {

double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BoxOffsets encode_offsets(const Box& gt, const Box& anchor) {
  BoxOffsets off;
  off.tx = (gt.cx() - anchor.cx()) / anchor.width();
  off.ty = (gt.cy() - anchor.cy()) / anchor.height();
  off.tw = std::log(gt.width() / anchor.width());
  off.th = std::log(gt.height() / anchor.height());
  return off;
}

Box decode_offsets(const BoxOffsets& off, const Box& anchor) {
  const double cx = anchor.cx() + off.tx * anchor.width();
  const double cy = anchor.cy() + off.ty * anchor.height();
  const double w = anchor.width() * std::exp(off.tw);
  const double h = anchor.height() * std::exp(off.th);
  return Box::from_center(cx, cy, w, h);
}

std::optional<Box> clip_to_image(const Box& b, double width, double height) {
  Box c{std::max(b.x1, 0.0), std::max(b.y1, 0.0), std::min(b.x2, width), std::min(b.y2, height)};
  if (!c.valid()) return std::nullopt;
  return c;
}

namespace {

bool det_order(const Detection& a, const Detection& b) {
  return std::make_tuple(-a.score, a.class_id, a.box.x1, a.box.y1, a.box.y2, a.box.x2) <
         std::make_tuple(-b.score, b.class_id, b.box.x1, b.box.y1, b.box.y2, b.box.x2);
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  for (const auto& d : dets) {
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw std::invalid_argument("nms requires scores in [0,1]");
    }
  }
  std::sort(dets.begin(), dets.end(), det_order);
  std::vector<Detection> kept;
  std::vector<char> alive(dets.size(), 1);
  for (size_t i = 0; i < dets.size(); ++i) {
    if (!alive[i]) continue;
    kept.push_back(dets[i]);
    for (size_t j = i + 1; j < dets.size(); ++j) {
      if (!alive[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) alive[j] = 0;
    }
  }
  return kept;
}

}  // namespace deeva
