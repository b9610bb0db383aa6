#include "refdet/assign.hpp"

#include <algorithm>
#include <stdexcept>

namespace refdet {

RpnAssignment assign_rpn_labels(const std::vector<Box>& anchors, const std::vector<Box>& gt,
                                float pos_iou, float neg_iou, bool force_match) {
  const int na = static_cast<int>(anchors.size());
  const int ng = static_cast<int>(gt.size());
  RpnAssignment out;
  out.labels.assign(na, 0);
  out.matched_gt.assign(na, -1);
  if (ng == 0) {
    out.num_pos = 0;
    return out;  // no targets: everything is negative
  }

  std::vector<float> gt_best(ng, 0.0f);
  std::vector<int> gt_best_anchor(ng, -1);
  for (int i = 0; i < na; ++i) {
    float best = 0.0f;
    int best_j = -1;
    for (int j = 0; j < ng; ++j) {
      const float v = iou(anchors[i], gt[j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
      if (v > gt_best[j]) {
        gt_best[j] = v;
        gt_best_anchor[j] = i;  // strict > keeps the lowest index on ties
      }
    }
    out.matched_gt[i] = best_j;
    if (best >= pos_iou) {
      out.labels[i] = 1;
    } else if (best < neg_iou) {
      out.labels[i] = 0;
    } else {
      out.labels[i] = -1;
    }
  }

  if (force_match) {
    for (int j = 0; j < ng; ++j) {
      if (gt_best_anchor[j] < 0 || gt_best[j] <= 0.0f) continue;
      out.labels[gt_best_anchor[j]] = 1;
      out.matched_gt[gt_best_anchor[j]] = j;
    }
  }
  for (auto l : out.labels) out.num_pos += l == 1;
  return out;
}

namespace {

std::vector<int> pick(std::vector<int> pool, int k, Rng& rng) {
  if (k >= static_cast<int>(pool.size())) return pool;
  rng.shuffle(pool);
  pool.resize(k);
  return pool;
}

}  // namespace

RpnSample sample_rpn(const RpnAssignment& a, int batch, float pos_fraction, Rng& rng) {
  std::vector<int> pos, neg;
  for (int i = 0; i < static_cast<int>(a.labels.size()); ++i) {
    if (a.labels[i] == 1) pos.push_back(i);
    if (a.labels[i] == 0) neg.push_back(i);
  }
  RpnSample s;
  if (batch <= 0) {
    s.pos = std::move(pos);
    s.neg = std::move(neg);
    return s;
  }
  const int want_pos = static_cast<int>(batch * pos_fraction);
  s.pos = pick(std::move(pos), want_pos, rng);
  s.neg = pick(std::move(neg), batch - static_cast<int>(s.pos.size()), rng);
  return s;
}

RoiAssignment assign_roi_labels(const std::vector<Box>& proposals, const std::vector<Box>& gt,
                                const std::vector<int>& gt_labels, float pos_iou,
                                const std::array<float, 4>& delta_stds) {
  if (gt.size() != gt_labels.size()) throw std::invalid_argument("gt boxes/labels size mismatch");
  RoiAssignment out;
  out.boxes = proposals;
  out.gt_start = static_cast<int>(proposals.size());
  if (!gt.empty()) out.boxes.insert(out.boxes.end(), gt.begin(), gt.end());

  const int n = static_cast<int>(out.boxes.size());
  out.labels.assign(n, 0);
  out.deltas.assign(n, {0.0f, 0.0f, 0.0f, 0.0f});
  if (gt.empty()) return out;

  for (int i = 0; i < n; ++i) {
    float best = 0.0f;
    int best_j = -1;
    for (int j = 0; j < static_cast<int>(gt.size()); ++j) {
      const float v = iou(out.boxes[i], gt[j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best_j >= 0 && best >= pos_iou) {
      out.labels[i] = gt_labels[best_j];
      const BoxDeltas d = encode_deltas(out.boxes[i], gt[best_j]);
      out.deltas[i] = {d.dx / delta_stds[0], d.dy / delta_stds[1], d.dw / delta_stds[2],
                       d.dh / delta_stds[3]};
    }
  }
  return out;
}

RoiBatchSample sample_roi_batch(const RoiAssignment& a, int batch, int max_pos, Rng& rng) {
  RoiBatchSample s;
  const int n = static_cast<int>(a.boxes.size());
  if (n == 0) return s;

  std::vector<int> pos_gt, pos_other, neg;
  for (int i = 0; i < n; ++i) {
    if (a.labels[i] > 0) {
      (i >= a.gt_start ? pos_gt : pos_other).push_back(i);
    } else {
      neg.push_back(i);
    }
  }

  // Ground-truth boxes stay in the batch unconditionally so every target
  // keeps a positive example; remaining positive slots are sampled.
  std::vector<int> pos = pos_gt;
  const int room = std::max(0, max_pos - static_cast<int>(pos.size()));
  for (int i : pick(std::move(pos_other), room, rng)) pos.push_back(i);

  const int need_neg = batch - static_cast<int>(pos.size());
  std::vector<int> negs;
  if (!neg.empty() && need_neg > 0) {
    if (static_cast<int>(neg.size()) >= need_neg) {
      negs = pick(std::move(neg), need_neg, rng);
    } else {
      negs = neg;  // short pool: top up with replacement
      while (static_cast<int>(negs.size()) < need_neg) {
        negs.push_back(neg[rng.uniform_int(0, static_cast<int>(neg.size()) - 1)]);
      }
    }
  }

  for (int i : pos) {
    s.indices.push_back(i);
    s.positive.push_back(1);
  }
  for (int i : negs) {
    s.indices.push_back(i);
    s.positive.push_back(0);
  }
  s.num_pos = static_cast<int>(pos.size());
  return s;
}

}  // namespace refdet
