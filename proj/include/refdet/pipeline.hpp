#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refdet/config.hpp"
#include "refdet/dataset.hpp"
#include "refdet/eval.hpp"
#include "refdet/model.hpp"

namespace refdet {

struct StepLosses {
  float rpn_cls = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0, ptg = 0;
  float total = 0;
  bool skipped = false;  // no usable proposals this image
};

// Forward + losses for one sample; gradients accumulate into the detector's
// parameters (caller owns zero_grad/step). normal_pool indexes the manifest's
// normal train samples for the reconstruction loss.
StepLosses compute_losses(Detector& det, const LoadedSample& sample,
                          const DatasetManifest& manifest, const std::vector<int>& normal_pool,
                          const ExperimentConfig& cfg, Rng& rng, float loss_scale = 1.0f);

struct TrainResult {
  std::string checkpoint_path;
  std::vector<float> loss_curve;  // total loss per optimizer step
  int steps = 0;
};

// Full training pipeline into cfg.out_dir: config.resolved, checkpoints/,
// metrics.log, report/. The run directory is locked for the duration.
TrainResult train_run(const ExperimentConfig& cfg);

struct EvalRunResult {
  EvalReport report;
  std::vector<Detection> detections;  // original-image coordinates
  std::vector<GtBox> gts;
  Detector::Timing timing;
  double forward_seconds = 0.0;
};

// Single-image inference. The sample is resized to the test scale, run in
// eval mode under the configured reference handling, and the detections come
// back in the sample's pre-resize coordinate frame with image_id left 0.
std::vector<Detection> detect_sample(Detector& det, LoadedSample s,
                                     const DatasetManifest& manifest,
                                     const ExperimentConfig& cfg);

// Runs the detector over a split. `shifted` applies the pixel-shift
// corruption (template untouched) before resizing; shift_seed fixes the
// offsets so variants see identical corruption.
EvalRunResult eval_split(Detector& det, const DatasetManifest& manifest, const std::string& split,
                         const ExperimentConfig& cfg, bool shifted, std::uint64_t shift_seed);

// Checkpoint-driven evaluation; writes report/ files under out_dir when
// non-empty. TR-Post plugs in here without retraining.
EvalReport eval_run(const ExperimentConfig& cfg, const std::string& checkpoint,
                    const std::string& split, bool shifted, const std::string& out_dir);

// Detections above cfg.eval.score_thresh exported per image; render
// additionally writes overlay PNGs with boxes scoring >= render_thresh.
// Unreadable images produce a per-file error on stderr and the batch
// continues.
void predict_run(const ExperimentConfig& cfg, const std::string& checkpoint,
                 const std::string& split, const std::string& out_dir, bool render);

}  // namespace refdet
