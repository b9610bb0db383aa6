#include "refdet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "refdet/assign.hpp"

#ifndef REFDET_CODE_VERSION
#define REFDET_CODE_VERSION "unknown"
#endif

namespace refdet {

namespace fs = std::filesystem;

namespace {

struct RunLock {
  fs::path path;
  explicit RunLock(const fs::path& dir) : path(dir / ".lock") {
    std::FILE* f = std::fopen(path.string().c_str(), "wx");
    if (!f) {
      throw std::runtime_error("run directory is locked (remove " + path.string() +
                               " if no other process is training)");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

struct Stats {
  float mean, stddev;
};

Stats resolve_stats(const ExperimentConfig& cfg, const DatasetManifest& m) {
  if (cfg.data.use_manifest_stats) return {m.pixel_mean, m.pixel_std};
  return {cfg.data.pixel_mean, cfg.data.pixel_std};
}

// Normalized network inputs for the configured reference mode.
struct ModelInputs {
  Tensor input;
  Tensor template_input;  // defined only for mode "inter"
};

ModelInputs make_inputs(const LoadedSample& s, const std::string& tr_mode, Stats st) {
  ModelInputs mi;
  const Tensor img = image_to_tensor(s.image);
  if (tr_mode == "pre") {
    if (s.tmpl.empty()) throw std::runtime_error("tr_mode pre needs a template for every sample");
    mi.input = tr_pre(img, image_to_tensor(s.tmpl), st.stddev);
  } else {
    mi.input = mean_pre(img, st.mean, st.stddev);
    if (tr_mode == "inter") {
      if (s.tmpl.empty()) {
        throw std::runtime_error("tr_mode inter needs a template for every sample");
      }
      mi.template_input = mean_pre(image_to_tensor(s.tmpl), st.mean, st.stddev);
    }
  }
  return mi;
}

void check_template_requirements(const ExperimentConfig& cfg, const DatasetManifest& m,
                                 bool for_training) {
  const std::string& mode = cfg.model.tr_mode;
  if (mode == "pre" || mode == "inter") {
    if (for_training && !m.has_templates("train")) {
      throw std::invalid_argument("tr_mode " + mode + " requires templates in the train split");
    }
    if (!m.has_templates("test")) {
      throw std::invalid_argument("tr_mode " + mode + " requires templates in the test split");
    }
  }
  if (mode == "post" && !m.has_templates("test")) {
    throw std::invalid_argument("tr_mode post requires templates in the test split");
  }
}

std::vector<Box> flatten_anchor_boxes(const AnchorGrid& g) {
  std::vector<Box> out;
  for (const auto& level : g.levels) out.insert(out.end(), level.begin(), level.end());
  return out;
}

}  // namespace

StepLosses compute_losses(Detector& det, const LoadedSample& sample,
                          const DatasetManifest& manifest, const std::vector<int>& normal_pool,
                          const ExperimentConfig& cfg, Rng& rng, float loss_scale) {
  StepLosses out;
  const Stats st = resolve_stats(cfg, manifest);
  ModelInputs mi = make_inputs(sample, cfg.model.tr_mode, st);
  const float img_w = static_cast<float>(sample.image.w);
  const float img_h = static_cast<float>(sample.image.h);

  Pyramid p = det.forward_pyramid(mi.input, mi.template_input.defined() ? &mi.template_input
                                                                        : nullptr);
  RpnOut ro = det.rpn(p);
  const AnchorGrid grid = det.anchors_for(ro.level_shapes);
  const std::vector<Box> anchors = flatten_anchor_boxes(grid);

  std::vector<Box> gt;
  std::vector<int> gt_labels;
  for (const auto& [b, cat] : sample.boxes) {
    gt.push_back(b);
    gt_labels.push_back(cat);
  }

  // RPN losses over a sampled anchor batch.
  const RpnAssignment ra =
      assign_rpn_labels(anchors, gt, cfg.train.rpn_pos_iou, cfg.train.rpn_neg_iou, true);
  const RpnSample rs = sample_rpn(ra, cfg.train.rpn_batch, cfg.train.rpn_pos_fraction, rng);

  std::vector<int> cls_idx = rs.pos;
  cls_idx.insert(cls_idx.end(), rs.neg.begin(), rs.neg.end());
  Tensor total;
  if (!cls_idx.empty()) {
    std::vector<float> targets(cls_idx.size(), 0.0f);
    std::fill(targets.begin(), targets.begin() + rs.pos.size(), 1.0f);
    Tensor rpn_cls = bce_logits_mean(gather_rows(ro.logits, cls_idx), targets);
    out.rpn_cls = rpn_cls.item();
    total = rpn_cls;
  }
  if (!rs.pos.empty()) {
    std::vector<float> reg_targets;
    reg_targets.reserve(rs.pos.size() * 4);
    for (int i : rs.pos) {
      const BoxDeltas d = encode_deltas(anchors[i], gt[ra.matched_gt[i]]);
      reg_targets.insert(reg_targets.end(), {d.dx, d.dy, d.dw, d.dh});
    }
    std::vector<float> w(reg_targets.size(), 1.0f);
    Tensor rpn_reg = scale(smooth_l1_weighted_sum(gather_rows(ro.deltas, rs.pos), reg_targets, w),
                           1.0f / static_cast<float>(rs.pos.size()));
    out.rpn_reg = rpn_reg.item();
    total = total.defined() ? add(total, rpn_reg) : rpn_reg;
  }

  // ROI losses over the padded proposal batch.
  std::vector<Box> prop_boxes;
  for (const auto& pr : det.proposals(ro, grid, img_w, img_h, true)) prop_boxes.push_back(pr.box);
  const RoiAssignment roi_assign =
      assign_roi_labels(prop_boxes, gt, gt_labels, cfg.train.roi_pos_iou, cfg.model.delta_stds);
  const RoiBatchSample rb =
      sample_roi_batch(roi_assign, cfg.train.roi_batch, cfg.train.roi_pos, rng);
  if (rb.indices.empty()) {
    out.skipped = !total.defined();
    if (out.skipped) return out;
    std::cerr << "warning: no usable proposals, ROI losses skipped this image\n";
  } else {
    std::vector<Box> batch_boxes;
    std::vector<int> batch_labels;
    for (int i : rb.indices) {
      batch_boxes.push_back(roi_assign.boxes[i]);
      batch_labels.push_back(roi_assign.labels[i]);
    }
    RoiOut roi = det.roi_forward(p, batch_boxes, img_w, img_h);
    Tensor roi_cls = softmax_ce_mean(roi.cls_logits, batch_labels);
    out.roi_cls = roi_cls.item();
    total = total.defined() ? add(total, roi_cls) : roi_cls;

    if (rb.num_pos > 0) {
      const int c = cfg.model.num_classes;
      const int n = static_cast<int>(rb.indices.size());
      std::vector<float> targets(static_cast<std::size_t>(n) * 4 * c, 0.0f);
      std::vector<float> weights(targets.size(), 0.0f);
      for (int r = 0; r < n; ++r) {
        if (!rb.positive[r]) continue;
        const int cat = batch_labels[r];
        const auto& d = roi_assign.deltas[rb.indices[r]];
        for (int k = 0; k < 4; ++k) {
          targets[static_cast<std::size_t>(r) * 4 * c + 4 * (cat - 1) + k] = d[k];
          weights[static_cast<std::size_t>(r) * 4 * c + 4 * (cat - 1) + k] = 1.0f;
        }
      }
      Tensor roi_reg = scale(smooth_l1_weighted_sum(roi.deltas, targets, weights),
                             1.0f / static_cast<float>(rb.num_pos));
      out.roi_reg = roi_reg.item();
      total = add(total, roi_reg);
    }
  }

  // Pseudo-template generators also reconstruct a defect-free sample.
  if (cfg.model.tr_mode == "ptg-inter" && !normal_pool.empty()) {
    const int pick = normal_pool[rng.uniform_int(0, static_cast<int>(normal_pool.size()) - 1)];
    LoadedSample normal = load_sample(manifest, manifest.records[pick]);
    if (normal.image.h != sample.image.h || normal.image.w != sample.image.w) {
      normal.tmpl = Image();
      const int short_edge = std::min(sample.image.h, sample.image.w);
      resize_sample(normal, short_edge, std::max(sample.image.h, sample.image.w));
    }
    Tensor nin = mean_pre(image_to_tensor(normal.image), st.mean, st.stddev);
    StageFeatures ns = det.backbone_stages(nin);
    Tensor ptg_loss = scale(ptg_reconstruction_loss(ns, det.ptg(), cfg.model.ptg_loss_mode),
                            cfg.model.ptg_loss_weight);
    out.ptg = ptg_loss.item();
    total = total.defined() ? add(total, ptg_loss) : ptg_loss;
  }

  if (!total.defined()) {
    out.skipped = true;
    return out;
  }
  out.total = out.rpn_cls + out.rpn_reg + out.roi_cls + out.roi_reg + out.ptg;
  scale(total, loss_scale).backward();
  return out;
}

TrainResult train_run(const ExperimentConfig& cfg) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(cfg.data.root);
  check_template_requirements(cfg, manifest, true);

  const std::vector<int> train_idx = manifest.split_indices("train");
  if (train_idx.empty()) throw std::runtime_error("train split is empty");

  std::vector<int> normal_pool;
  for (int i : train_idx) {
    if (manifest.records[i].is_normal) normal_pool.push_back(i);
  }
  if (cfg.model.tr_mode == "ptg-inter" && normal_pool.empty()) {
    throw std::invalid_argument(
        "tr_mode ptg-inter needs defect-free train samples for the reconstruction loss");
  }

  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "report");
  RunLock lock(out);
  save_config((out / "config.resolved").string(), cfg);

  std::ofstream log(out / "metrics.log");
  if (!log) throw std::runtime_error("cannot write metrics.log under " + cfg.out_dir);
  log << "# refdet-train code_version=" << REFDET_CODE_VERSION << " seed=" << cfg.train.seed
      << "\n";
  log.flush();

  Detector det(cfg);
  det.set_training(true);
  const std::vector<Tensor> trainable = det.trainable_params();
  nn::Sgd opt(trainable, cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay);

  const int ips = cfg.train.images_per_step;
  const int steps_per_epoch =
      (static_cast<int>(train_idx.size()) + ips - 1) / ips;
  const int total_steps = steps_per_epoch * cfg.train.epochs;
  const int warmup = std::max(1, std::min(cfg.train.warmup_iters, total_steps / 10));

  TrainResult result;
  Rng rng(cfg.train.seed);
  int it = 0;
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    float decay_mult = 1.0f;
    for (int d : cfg.train.decay_epochs) {
      if (epoch >= d) decay_mult *= cfg.train.decay_factor;
    }

    std::vector<int> order = train_idx;
    rng.shuffle(order);
    for (int s0 = 0; s0 < static_cast<int>(order.size()); s0 += ips) {
      const int count = std::min(ips, static_cast<int>(order.size()) - s0);
      const int size_target = sample_train_size(cfg.data, rng);

      opt.zero_grad();
      StepLosses acc;
      int used = 0;
      for (int k = 0; k < count; ++k) {
        LoadedSample s = load_sample(manifest, manifest.records[order[s0 + k]]);
        resize_sample(s, size_target, cfg.data.max_size);
        StepLosses l = compute_losses(det, s, manifest, normal_pool, cfg, rng,
                                      1.0f / static_cast<float>(count));
        if (l.skipped) continue;
        acc.rpn_cls += l.rpn_cls;
        acc.rpn_reg += l.rpn_reg;
        acc.roi_cls += l.roi_cls;
        acc.roi_reg += l.roi_reg;
        acc.ptg += l.ptg;
        acc.total += l.total;
        ++used;
      }
      ++it;
      if (used == 0) {
        std::cerr << "warning: step " << it << " had no usable images, skipped\n";
        continue;
      }
      const float inv = 1.0f / static_cast<float>(used);
      acc.rpn_cls *= inv;
      acc.rpn_reg *= inv;
      acc.roi_cls *= inv;
      acc.roi_reg *= inv;
      acc.ptg *= inv;
      acc.total *= inv;

      if (cfg.train.grad_clip_norm > 0.0f) nn::clip_grad_norm(trainable, cfg.train.grad_clip_norm);
      const float warm = it <= warmup ? static_cast<float>(it) / warmup : 1.0f;
      opt.set_lr(cfg.train.lr * warm * decay_mult);
      opt.step();

      result.loss_curve.push_back(acc.total);
      if (it % std::max(1, cfg.train.log_every) == 0 || it == total_steps) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "iter=%d epoch=%d lr=%.6g rpn_cls=%.4f rpn_reg=%.4f roi_cls=%.4f "
                      "roi_reg=%.4f ptg=%.4f total=%.4f\n",
                      it, epoch, opt.lr(), acc.rpn_cls, acc.rpn_reg, acc.roi_cls, acc.roi_reg,
                      acc.ptg, acc.total);
        log << line;
        log.flush();
      }
    }

    if (cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0 &&
        epoch != cfg.train.epochs) {
      det.save((out / "checkpoints" / ("epoch_" + std::to_string(epoch) + ".ckpt")).string());
    }
    if (cfg.train.eval_every > 0 && epoch % cfg.train.eval_every == 0) {
      EvalRunResult er = eval_split(det, manifest, "test", cfg, false, cfg.train.seed);
      det.set_training(true);
      char line[96];
      std::snprintf(line, sizeof(line), "epoch=%d eval_map50=%.4f\n", epoch, er.report.map);
      log << line;
      log.flush();
    }
  }

  result.steps = it;
  result.checkpoint_path = (out / "checkpoints" / "final.ckpt").string();
  det.save(result.checkpoint_path);
  return result;
}

std::vector<Detection> detect_sample(Detector& det, LoadedSample s,
                                     const DatasetManifest& manifest,
                                     const ExperimentConfig& cfg) {
  const bool was_training = det.training();
  det.set_training(false);
  NoGradGuard no_grad;

  const Stats st = resolve_stats(cfg, manifest);
  const int c = cfg.model.num_classes;

  const float scale_f = resize_sample(s, cfg.data.test_min_size, cfg.data.max_size);
  const float img_w = static_cast<float>(s.image.w);
  const float img_h = static_cast<float>(s.image.h);

  ModelInputs mi = make_inputs(s, cfg.model.tr_mode, st);
  Pyramid p = det.forward_pyramid(mi.input, mi.template_input.defined() ? &mi.template_input
                                                                        : nullptr);
  RpnOut ro = det.rpn(p);
  const AnchorGrid grid = det.anchors_for(ro.level_shapes);
  const auto props = det.proposals(ro, grid, img_w, img_h, false);
  std::vector<Detection> dets;
  if (!props.empty()) {
    std::vector<Box> boxes;
    boxes.reserve(props.size());
    for (const auto& pr : props) boxes.push_back(pr.box);

    RoiOut roi = det.roi_forward(p, boxes, img_w, img_h);
    const int n = static_cast<int>(boxes.size());
    Tensor prob_t = softmax_rows(roi.cls_logits);
    std::vector<float> probs(prob_t.data(), prob_t.data() + prob_t.numel());

    if (cfg.model.tr_mode == "post") {
      if (s.tmpl.empty()) throw std::runtime_error("tr_mode post needs templates at eval time");
      Tensor tin = mean_pre(image_to_tensor(s.tmpl), st.mean, st.stddev);
      Pyramid tp = det.forward_pyramid(tin, nullptr);
      Tensor temb = det.roi_embed(tp, boxes, img_w, img_h);
      probs = tr_post_rescore(probs, c + 1, roi.embed, temb);
    }

    std::vector<std::array<float, 4>> class_boxes(static_cast<std::size_t>(n) * c);
    const float* dd = roi.deltas.data();
    for (int i = 0; i < n; ++i) {
      for (int cat = 1; cat <= c; ++cat) {
        const float* dr = dd + i * 4 * c + 4 * (cat - 1);
        const BoxDeltas d{dr[0] * cfg.model.delta_stds[0], dr[1] * cfg.model.delta_stds[1],
                          dr[2] * cfg.model.delta_stds[2], dr[3] * cfg.model.delta_stds[3]};
        Box decoded = clip_box(decode_deltas(boxes[i], d), img_w, img_h);
        class_boxes[static_cast<std::size_t>(i) * c + (cat - 1)] = {decoded.x1, decoded.y1,
                                                                    decoded.x2, decoded.y2};
      }
    }

    dets = postprocess(probs, n, c, class_boxes, cfg.eval);
    for (auto& d : dets) {
      d.box.x1 /= scale_f;
      d.box.y1 /= scale_f;
      d.box.x2 /= scale_f;
      d.box.y2 /= scale_f;
    }
  }
  det.set_training(was_training);
  return dets;
}

EvalRunResult eval_split(Detector& det, const DatasetManifest& manifest, const std::string& split,
                         const ExperimentConfig& cfg, bool shifted, std::uint64_t shift_seed) {
  const std::vector<int> idx = manifest.split_indices(split);
  if (idx.empty()) throw std::runtime_error("split '" + split + "' is empty");
  check_template_requirements(cfg, manifest, false);

  const bool was_training = det.training();
  det.set_training(false);
  det.reset_timing();
  det.enable_timing(true);
  NoGradGuard no_grad;

  Rng shift_rng(shift_seed);
  EvalRunResult out;

  const auto t0 = std::chrono::steady_clock::now();
  int image_id = 0;
  for (int rec_idx : idx) {
    LoadedSample s = load_sample(manifest, manifest.records[rec_idx]);
    if (shifted) apply_pixel_shift(s, cfg.data.shift_min, cfg.data.shift_max, shift_rng);
    for (const auto& [b, cat] : s.boxes) out.gts.push_back(GtBox{image_id, b, cat});

    for (Detection d : detect_sample(det, std::move(s), manifest, cfg)) {
      d.image_id = image_id;
      out.detections.push_back(d);
    }
    ++image_id;
  }
  out.forward_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.timing = det.timing();
  det.enable_timing(false);
  det.set_training(was_training);

  out.report = map50(out.detections, out.gts, manifest.categories, cfg.eval.eleven_point);
  return out;
}

EvalReport eval_run(const ExperimentConfig& cfg, const std::string& checkpoint,
                    const std::string& split, bool shifted, const std::string& out_dir) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(cfg.data.root);
  Detector det(cfg);
  det.load(checkpoint);
  EvalRunResult r = eval_split(det, manifest, split, cfg, shifted, cfg.train.seed);

  if (!out_dir.empty()) {
    const fs::path rep = fs::path(out_dir) / "report";
    fs::create_directories(rep);
    const std::string tag = split + (shifted ? "_shifted" : "");
    std::ofstream jf(rep / ("eval_" + tag + ".json"));
    jf << r.report.to_json() << "\n";
    std::ofstream tf(rep / ("eval_" + tag + ".txt"));
    tf << r.report.pretty();
    save_detections((rep / ("detections_" + tag + ".jsonl")).string(), r.detections);
  }
  std::cout << r.report.pretty();
  return r.report;
}

void predict_run(const ExperimentConfig& cfg, const std::string& checkpoint,
                 const std::string& split, const std::string& out_dir, bool render) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(cfg.data.root);
  Detector det(cfg);
  det.load(checkpoint);
  det.set_training(false);
  NoGradGuard no_grad;

  const fs::path out(out_dir);
  fs::create_directories(out);
  if (render) fs::create_directories(out / "render");

  const std::vector<int> idx = manifest.split_indices(split);
  if (idx.empty()) throw std::runtime_error("split '" + split + "' is empty");

  static const std::array<std::array<float, 3>, 6> kPalette = {{{230, 60, 60},
                                                                {60, 200, 60},
                                                                {60, 110, 230},
                                                                {230, 200, 40},
                                                                {200, 60, 200},
                                                                {40, 210, 210}}};

  std::vector<Detection> all;
  std::ofstream map_file(out / "images.txt");
  int image_id = 0;
  for (int rec_idx : idx) {
    const SampleRecord& rec = manifest.records[rec_idx];
    LoadedSample s;
    try {
      s = load_sample(manifest, rec);
    } catch (const std::exception& e) {
      std::cerr << "error: skipping " << rec.image_path << ": " << e.what() << "\n";
      ++image_id;
      continue;
    }
    map_file << image_id << " " << rec.image_path << "\n";
    const Image original = s.image;

    std::vector<Detection> dets = detect_sample(det, std::move(s), manifest, cfg);
    for (auto& d : dets) d.image_id = image_id;
    all.insert(all.end(), dets.begin(), dets.end());

    if (render) {
      Image overlay = original.c == 3 ? original : gray_to_rgb(original);
      for (const auto& d : dets) {
        if (d.score < cfg.eval.render_thresh) continue;
        draw_box(overlay, d.box, kPalette[(d.category - 1) % kPalette.size()], 1);
      }
      const std::string name = fs::path(rec.image_path).filename().string();
      write_png((out / "render" / name).string(), overlay);
    }
    ++image_id;
  }
  save_detections((out / "detections.jsonl").string(), all);
}

}  // namespace refdet
