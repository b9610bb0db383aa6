#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace refdet {

// Axis-aligned box, corner form [x1, y1, x2, y2], end-exclusive extents
// (width = x2 - x1). All geometry below works in continuous coordinates.
struct Box {
  float x1 = 0.0f;
  float y1 = 0.0f;
  float x2 = 0.0f;
  float y2 = 0.0f;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const;
  float cx() const { return 0.5f * (x1 + x2); }
  float cy() const { return 0.5f * (y1 + y2); }
};

// Regression targets (dx, dy, dw, dh) in the standard center/log-size form.
struct BoxDeltas {
  float dx = 0.0f;
  float dy = 0.0f;
  float dw = 0.0f;
  float dh = 0.0f;
};

float iou(const Box& a, const Box& b);

// Greedy score-descending suppression; returns kept indices in that order.
// Ties in score keep the lower original index first. Boxes whose IoU with a
// kept box exceeds `iou_threshold` are dropped (strictly-greater comparison).
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                     float iou_threshold);

BoxDeltas encode_deltas(const Box& anchor, const Box& target);

// Inverse of encode_deltas. `max_exp` clamps dw/dh before exponentiation;
// the default leaves them unclamped so encode/decode round-trips exactly.
Box decode_deltas(const Box& anchor, const BoxDeltas& d,
                  float max_exp = 1e30f);

Box clip_box(const Box& b, float img_w, float img_h);

// Scales width and height by k (> 1) about the box center, then clips each
// corner to [0,w]x[0,h] independently; the center may shift near borders.
Box context_box(const Box& b, float k, float img_w, float img_h);

// Pyramid level for ROI pooling: floor(log2(sqrt(w*h)/56)) clamped to [2,5].
// Rejects non-positive dimensions.
int map_level(float w, float h);

// Anchors for one feature map of the given stride, row-major over (y, x,
// ratio), centered at ((x+0.5)*stride, (y+0.5)*stride). Ratio r produces
// height/width = r with the anchor area size^2 preserved.
std::vector<Box> generate_anchors(int feat_h, int feat_w, int stride, float size,
                                  const std::vector<float>& ratios);

// One anchor set per pyramid level; one base size per level, shared ratios.
struct AnchorGrid {
  std::vector<std::vector<Box>> levels;
  std::vector<int> strides;
};

AnchorGrid generate_anchor_grid(const std::vector<std::array<int, 2>>& level_shapes,
                                const std::vector<int>& strides, const std::vector<float>& sizes,
                                const std::vector<float>& ratios);

}  // namespace refdet
