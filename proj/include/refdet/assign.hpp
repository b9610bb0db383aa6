#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "refdet/geometry.hpp"
#include "refdet/rng.hpp"

namespace refdet {

// labels: 1 positive, 0 negative, -1 ignore. matched_gt holds the argmax-IoU
// ground truth per anchor (-1 when there is none).
struct RpnAssignment {
  std::vector<std::int8_t> labels;
  std::vector<int> matched_gt;
  int num_pos = 0;
};

// Threshold rule: max IoU >= pos_iou -> positive, < neg_iou -> negative,
// otherwise ignore. With force_match, the best-IoU anchor of each ground
// truth is promoted to positive even below the threshold (ties break to the
// lowest anchor index), so thin targets never end up unclaimed.
RpnAssignment assign_rpn_labels(const std::vector<Box>& anchors, const std::vector<Box>& gt,
                                float pos_iou, float neg_iou, bool force_match = true);

struct RpnSample {
  std::vector<int> pos;
  std::vector<int> neg;
};

// Samples up to `batch` anchors (pos_fraction positives when available,
// negatives fill the rest). batch <= 0 keeps every labeled anchor.
RpnSample sample_rpn(const RpnAssignment& a, int batch, float pos_fraction, Rng& rng);

struct RoiAssignment {
  std::vector<Box> boxes;   // proposals followed by the ground-truth boxes
  std::vector<int> labels;  // 0 background, 1..c
  std::vector<std::array<float, 4>> deltas;  // normalized; zero for background
  int gt_start = 0;         // index where the augmented ground truths begin
};

// Augments proposals with the ground-truth boxes, labels by max-IoU >=
// pos_iou, and encodes normalized regression targets for positives. Empty
// ground truth yields all-background with no augmentation.
RoiAssignment assign_roi_labels(const std::vector<Box>& proposals, const std::vector<Box>& gt,
                                const std::vector<int>& gt_labels, float pos_iou,
                                const std::array<float, 4>& delta_stds);

struct RoiBatchSample {
  std::vector<int> indices;           // into RoiAssignment::boxes
  std::vector<std::int8_t> positive;  // parallel to indices
  int num_pos = 0;
};

// At most max_pos positives (augmented ground truths always kept), negatives
// pad to `batch` total, drawn with replacement if the pool is short. Zero
// candidates produce an empty batch; the caller skips the step.
RoiBatchSample sample_roi_batch(const RoiAssignment& a, int batch, int max_pos, Rng& rng);

}  // namespace refdet
