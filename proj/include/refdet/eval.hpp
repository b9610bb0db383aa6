#pragma once

#include <array>
#include <string>
#include <vector>

#include "refdet/config.hpp"
#include "refdet/geometry.hpp"

namespace refdet {

struct Detection {
  int image_id = 0;
  Box box;
  int category = 1;  // 1..c
  float score = 0.0f;
};

struct GtBox {
  int image_id = 0;
  Box box;
  int category = 1;
};

// Per-proposal class probabilities [n, c+1] (column 0 = background) and
// class-specific decoded boxes indexed [i*c + (cat-1)]. Applies the score
// filter, per-category NMS, and the global detection cap. image_id is left 0.
std::vector<Detection> postprocess(const std::vector<float>& probs, int n, int num_classes,
                                   const std::vector<std::array<float, 4>>& class_boxes,
                                   const EvalConfig& ec);

// Greedy PR-curve AP at the given IoU threshold for one category's
// detections/gts (already filtered). Detections may arrive in any order.
double average_precision(std::vector<Detection> dets, const std::vector<GtBox>& gts,
                         float iou_thresh, bool eleven_point);

struct EvalReport {
  double map = 0.0;
  std::vector<std::string> categories;   // names, index = category-1
  std::vector<double> per_category_ap;   // NaN when the category has zero gt
  std::vector<int> per_category_gt;
  int num_images = 0;
  int num_detections = 0;

  std::string pretty() const;
  std::string to_json() const;
};

// Mean AP over categories with at least one ground truth. A dataset with no
// ground truth at all is rejected.
EvalReport map50(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                 const std::vector<std::string>& categories, bool eleven_point = false,
                 float iou_thresh = 0.5f);

// One structured line per detection: image id, category, score, box corners.
void save_detections(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::string& path);

}  // namespace refdet
