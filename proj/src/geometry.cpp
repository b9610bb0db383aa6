#include "refdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace refdet {

float Box::area() const {
  float w = std::max(0.0f, x2 - x1);
  float h = std::max(0.0f, y2 - y1);
  return w * h;
}

float iou(const Box& a, const Box& b) {
  float ix1 = std::max(a.x1, b.x1);
  float iy1 = std::max(a.y1, b.y1);
  float ix2 = std::min(a.x2, b.x2);
  float iy2 = std::min(a.y2, b.y2);
  float iw = std::max(0.0f, ix2 - ix1);
  float ih = std::max(0.0f, iy2 - iy1);
  float inter = iw * ih;
  float uni = a.area() + b.area() - inter;
  if (uni <= 0.0f) return 0.0f;
  return inter / uni;
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                     float iou_threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: size mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    int a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      int b = order[j];
      if (removed[b]) continue;
      if (iou(boxes[a], boxes[b]) > iou_threshold) removed[b] = 1;
    }
  }
  return keep;
}

BoxDeltas encode_deltas(const Box& anchor, const Box& target) {
  float aw = anchor.width();
  float ah = anchor.height();
  if (aw <= 0.0f || ah <= 0.0f) throw std::invalid_argument("encode_deltas: empty anchor");
  float tw = target.width();
  float th = target.height();
  if (tw <= 0.0f || th <= 0.0f) throw std::invalid_argument("encode_deltas: empty target");
  BoxDeltas d;
  d.dx = (target.cx() - anchor.cx()) / aw;
  d.dy = (target.cy() - anchor.cy()) / ah;
  d.dw = std::log(tw / aw);
  d.dh = std::log(th / ah);
  return d;
}

Box decode_deltas(const Box& anchor, const BoxDeltas& d, float max_exp) {
  float aw = anchor.width();
  float ah = anchor.height();
  float cx = anchor.cx() + d.dx * aw;
  float cy = anchor.cy() + d.dy * ah;
  float w = aw * std::exp(std::min(d.dw, max_exp));
  float h = ah * std::exp(std::min(d.dh, max_exp));
  Box b;
  b.x1 = cx - 0.5f * w;
  b.y1 = cy - 0.5f * h;
  b.x2 = cx + 0.5f * w;
  b.y2 = cy + 0.5f * h;
  return b;
}

Box clip_box(const Box& b, float img_w, float img_h) {
  Box r;
  r.x1 = std::min(std::max(b.x1, 0.0f), img_w);
  r.y1 = std::min(std::max(b.y1, 0.0f), img_h);
  r.x2 = std::min(std::max(b.x2, 0.0f), img_w);
  r.y2 = std::min(std::max(b.y2, 0.0f), img_h);
  return r;
}

Box context_box(const Box& b, float k, float img_w, float img_h) {
  if (k <= 1.0f) throw std::invalid_argument("context_box: k must exceed 1");
  float w = b.width() * k;
  float h = b.height() * k;
  // Corners clip independently, so the center may shift near borders.
  Box r{b.cx() - 0.5f * w, b.cy() - 0.5f * h, b.cx() + 0.5f * w, b.cy() + 0.5f * h};
  return clip_box(r, img_w, img_h);
}

int map_level(float w, float h) {
  if (w <= 0.0f || h <= 0.0f) throw std::invalid_argument("map_level: non-positive box size");
  float scale = std::sqrt(w * h);
  int level = static_cast<int>(std::floor(std::log2(scale / 56.0f)));
  return std::clamp(level, 2, 5);
}

std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride, float size,
                                  const std::vector<float>& ratios) {
  if (feat_h <= 0 || feat_w <= 0) throw std::invalid_argument("generate_anchors: bad shape");
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * ratios.size());
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      float cx = (x + 0.5f) * stride;
      float cy = (y + 0.5f) * stride;
      for (float r : ratios) {
        // height/width = r at constant area size^2.
        float w = size / std::sqrt(r);
        float h = size * std::sqrt(r);
        anchors.push_back(Box{cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h});
      }
    }
  }
  return anchors;
}

AnchorGrid generate_anchor_grid(const std::vector<std::array<int, 2>>& level_shapes,
                                const std::vector<int>& strides, const std::vector<float>& sizes,
                                const std::vector<float>& ratios) {
  if (level_shapes.size() != strides.size() || strides.size() != sizes.size()) {
    throw std::invalid_argument("generate_anchor_grid: level counts do not match");
  }
  AnchorGrid grid;
  grid.strides = strides;
  grid.levels.reserve(level_shapes.size());
  for (std::size_t l = 0; l < level_shapes.size(); ++l) {
    grid.levels.push_back(
        generate_anchors(level_shapes[l][0], level_shapes[l][1], strides[l], sizes[l], ratios));
  }
  return grid;
}

}  // namespace refdet
