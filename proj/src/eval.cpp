#include "refdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace refdet {

std::vector<Detection> postprocess(const std::vector<float>& probs, int n, int num_classes,
                                   const std::vector<std::array<float, 4>>& class_boxes,
                                   const EvalConfig& ec) {
  const int c = num_classes;
  if (static_cast<int>(probs.size()) != n * (c + 1)) {
    throw std::invalid_argument("postprocess: probs size mismatch");
  }
  if (static_cast<int>(class_boxes.size()) != n * c) {
    throw std::invalid_argument("postprocess: boxes size mismatch");
  }

  std::vector<Detection> all;
  for (int cat = 1; cat <= c; ++cat) {
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (int i = 0; i < n; ++i) {
      const float s = probs[i * (c + 1) + cat];
      if (s < ec.score_thresh) continue;
      const auto& b = class_boxes[i * c + (cat - 1)];
      boxes.push_back(Box{b[0], b[1], b[2], b[3]});
      scores.push_back(s);
    }
    for (int k : nms(boxes, scores, ec.nms_thresh)) {
      all.push_back(Detection{0, boxes[k], cat, scores[k]});
    }
  }

  std::stable_sort(all.begin(), all.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(all.size()) > ec.max_dets) all.resize(ec.max_dets);
  return all;
}

namespace {

double area_under_pr(const std::vector<double>& recall, const std::vector<double>& precision,
                     bool eleven_point) {
  if (recall.empty()) return 0.0;
  if (eleven_point) {
    double total = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
      }
      total += best;
    }
    return total / 11.0;
  }
  // All-point interpolation: precision envelope from the right, then the
  // exact area under the stepwise curve.
  std::vector<double> r{0.0};
  r.insert(r.end(), recall.begin(), recall.end());
  std::vector<double> p{0.0};
  p.insert(p.end(), precision.begin(), precision.end());
  for (int i = static_cast<int>(p.size()) - 2; i >= 0; --i) p[i] = std::max(p[i], p[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 1; i < r.size(); ++i) ap += (r[i] - r[i - 1]) * p[i];
  return ap;
}

}  // namespace

double average_precision(std::vector<Detection> dets, const std::vector<GtBox>& gts,
                         float iou_thresh, bool eleven_point) {
  if (gts.empty()) return std::nan("");
  // Ties break by score, then by original position, so the result does not
  // depend on the caller's ordering beyond that stable index.
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  std::vector<char> gt_used(gts.size(), 0);
  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (int oi : order) {
    const Detection& d = dets[oi];
    int best_j = -1;
    float best_iou = 0.0f;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gt_used[j] || gts[j].image_id != d.image_id) continue;
      const float v = iou(d.box, gts[j].box);
      if (v > best_iou) {
        best_iou = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0 && best_iou >= iou_thresh) {
      gt_used[best_j] = 1;
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / gts.size());
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  return area_under_pr(recall, precision, eleven_point);
}

EvalReport map50(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                 const std::vector<std::string>& categories, bool eleven_point,
                 float iou_thresh) {
  if (gts.empty()) throw std::invalid_argument("map50: dataset has zero ground-truth boxes");
  const int c = static_cast<int>(categories.size());
  EvalReport rep;
  rep.categories = categories;
  rep.per_category_ap.assign(c, std::nan(""));
  rep.per_category_gt.assign(c, 0);
  rep.num_detections = static_cast<int>(dets.size());
  {
    std::vector<int> ids;
    for (const auto& g : gts) ids.push_back(g.image_id);
    for (const auto& d : dets) ids.push_back(d.image_id);
    std::sort(ids.begin(), ids.end());
    rep.num_images = static_cast<int>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }

  double sum = 0.0;
  int counted = 0;
  for (int cat = 1; cat <= c; ++cat) {
    std::vector<Detection> cd;
    std::vector<GtBox> cg;
    for (const auto& d : dets) {
      if (d.category == cat) cd.push_back(d);
    }
    for (const auto& g : gts) {
      if (g.category == cat) cg.push_back(g);
    }
    rep.per_category_gt[cat - 1] = static_cast<int>(cg.size());
    if (cg.empty()) continue;  // AP undefined, excluded from the mean
    const double ap = average_precision(std::move(cd), cg, iou_thresh, eleven_point);
    rep.per_category_ap[cat - 1] = ap;
    sum += ap;
    ++counted;
  }
  rep.map = counted > 0 ? sum / counted : 0.0;
  return rep;
}

std::string EvalReport::pretty() const {
  std::ostringstream os;
  os << "category            gt      AP@0.5\n";
  for (std::size_t i = 0; i < categories.size(); ++i) {
    char line[96];
    if (std::isnan(per_category_ap[i])) {
      std::snprintf(line, sizeof(line), "%-18s %5d          --\n", categories[i].c_str(),
                    per_category_gt[i]);
    } else {
      std::snprintf(line, sizeof(line), "%-18s %5d      %6.4f\n", categories[i].c_str(),
                    per_category_gt[i], per_category_ap[i]);
    }
    os << line;
  }
  char tail[64];
  std::snprintf(tail, sizeof(tail), "mAP@0.5: %.4f\n", map);
  os << tail;
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["map50"] = map;
  j["num_images"] = num_images;
  j["num_detections"] = num_detections;
  nlohmann::ordered_json cats = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < categories.size(); ++i) {
    nlohmann::ordered_json cj;
    cj["name"] = categories[i];
    cj["gt"] = per_category_gt[i];
    if (std::isnan(per_category_ap[i])) {
      cj["ap50"] = nullptr;
    } else {
      cj["ap50"] = per_category_ap[i];
    }
    cats.push_back(cj);
  }
  j["categories"] = cats;
  return j.dump(2);
}

void save_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& d : dets) {
    nlohmann::ordered_json j;
    j["image"] = d.image_id;
    j["category"] = d.category;
    j["score"] = d.score;
    j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
    f << j.dump() << "\n";
  }
}

std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<Detection> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::ordered_json::parse(line);
    Detection d;
    d.image_id = j.at("image").get<int>();
    d.category = j.at("category").get<int>();
    d.score = j.at("score").get<float>();
    const auto& b = j.at("box");
    d.box = Box{b[0].get<float>(), b[1].get<float>(), b[2].get<float>(), b[3].get<float>()};
    out.push_back(d);
  }
  return out;
}

}  // namespace refdet
