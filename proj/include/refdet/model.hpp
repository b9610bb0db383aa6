#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "refdet/config.hpp"
#include "refdet/geometry.hpp"
#include "refdet/image.hpp"
#include "refdet/nn.hpp"
#include "refdet/ops.hpp"
#include "refdet/tensor.hpp"

namespace refdet {

// C2..C5 at strides 4/8/16/32.
struct StageFeatures {
  std::array<Tensor, 4> c;
};

// P2..P5, uniform channel count.
using Pyramid = std::array<Tensor, 4>;

constexpr std::array<int, 4> kStrides = {4, 8, 16, 32};

Tensor image_to_tensor(const Image& img);  // [1, c, h, w]

// (I - mean) / std per channel.
Tensor mean_pre(const Tensor& img, float mean, float stddev);

// (I - T) / (2 std) per channel; shapes must match.
Tensor tr_pre(const Tensor& img, const Tensor& tmpl, float stddev);

// Cosine similarity per row pair; zero vectors give 0 by definition.
std::vector<float> cosine_rows(const Tensor& a, const Tensor& b);

// scores[i, :] *= (1 - cos_i), n x (c+1) row-major.
std::vector<float> tr_post_rescore(const std::vector<float>& scores, int classes_plus_bg,
                                   const Tensor& region_embed, const Tensor& template_embed);

struct Proposal {
  Box box;
  float objectness = 0.0f;
};

struct RpnOut {
  Tensor logits;  // [A_total, 1], anchor order (level, y, x, ratio)
  Tensor deltas;  // [A_total, 4]
  std::vector<std::array<int, 2>> level_shapes;
};

struct RoiOut {
  Tensor cls_logits;  // [n, c+1]
  Tensor deltas;      // [n, 4c]
  Tensor embed;       // [n, fc_dim] region embedding (post-ReLU)
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
  StageFeatures forward(const Tensor& x, bool training);

 private:
  struct Block {
    nn::Conv2d conv;
    nn::Norm2d norm;
  };
  Block stem_;
  std::vector<std::vector<Block>> stages_;
};

class Fpn {
 public:
  Fpn() = default;
  Fpn(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
  Pyramid forward(const StageFeatures& s) const;

 private:
  std::array<nn::Conv2d, 4> lateral_;
  nn::Conv2d shared_out_;  // one 3x3 kernel applied at every level
};

class RpnHead {
 public:
  RpnHead() = default;
  RpnHead(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
  RpnOut forward(const Pyramid& p) const;

 private:
  nn::Conv2d conv_;
  nn::Conv2d obj_;
  nn::Conv2d reg_;
  int num_ratios_ = 3;
};

// Per-stage encoder-decoder producing pseudo template features.
class PtgStage {
 public:
  PtgStage() = default;
  PtgStage(nn::ParamStore& store, const std::string& name, int channels, int hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  nn::Conv2d e1_, e2_, e3_;
  nn::Deconv2d d1_, d2_, d3_;
};

class Ptg {
 public:
  Ptg() = default;
  Ptg(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
  StageFeatures forward(const StageFeatures& s) const;

 private:
  std::array<PtgStage, 4> stages_;
};

// Sum over stages of the reconstruction error of normal-sample features.
// mode "mse": mean squared residual per stage; mode "l2": root-sum-squares.
Tensor ptg_reconstruction_loss(const StageFeatures& normal_stages, const Ptg& ptg,
                               const std::string& mode);

class RoiHead {
 public:
  RoiHead() = default;
  RoiHead(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);

  // region/context inputs are flattened pooled features [n, C*S*S].
  RoiOut forward(const Tensor& region_flat, const Tensor& context_flat) const;
  Tensor embed_only(const Tensor& region_flat) const;  // the 1024-d f vector

 private:
  nn::Linear fc1_, fc2_;
  nn::Linear ctx_fc1_, ctx_fc2_;  // used only when cr_share_fc is off
  nn::Linear cls_, reg_;
  bool cr_enabled_ = false;
  bool cr_share_ = true;
  bool cr_context_only_ = false;
};

class Detector {
 public:
  explicit Detector(const ExperimentConfig& cfg);

  // Template argument is required for tr_mode "inter", ignored otherwise.
  // Inputs are already normalized (mean_pre or tr_pre upstream).
  Pyramid forward_pyramid(const Tensor& input, const Tensor* template_input);
  StageFeatures backbone_stages(const Tensor& input);
  Pyramid fpn_only(const StageFeatures& s) const { return fpn_.forward(s); }

  RpnOut rpn(const Pyramid& p) const { return rpn_.forward(p); }

  AnchorGrid anchors_for(const std::vector<std::array<int, 2>>& level_shapes) const;

  std::vector<Proposal> proposals(const RpnOut& out, const AnchorGrid& anchors, float img_w,
                                  float img_h, bool training) const;

  RoiOut roi_forward(const Pyramid& p, const std::vector<Box>& boxes, float img_w,
                     float img_h) const;
  // Region embeddings only (TR-Post template path).
  Tensor roi_embed(const Pyramid& p, const std::vector<Box>& boxes, float img_w,
                   float img_h) const;

  const Ptg& ptg() const { return ptg_; }
  bool has_ptg() const { return has_ptg_; }

  void set_training(bool t) { training_ = t; }
  bool training() const { return training_; }

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  std::vector<Tensor> trainable_params() const;

  void save(const std::string& path) const;
  void load(const std::string& path);  // fingerprint-checked, PTG reconciled

  const ExperimentConfig& config() const { return cfg_; }

  // Wall-time per section accumulated during forward passes when enabled.
  struct Timing {
    double backbone = 0, fpn = 0, rpn = 0, roi = 0, ptg = 0;
    double total() const { return backbone + fpn + rpn + roi + ptg; }
  };
  void enable_timing(bool on) { timing_enabled_ = on; }
  const Timing& timing() const { return timing_; }
  void reset_timing() { timing_ = {}; }

 private:
  Tensor pooled_flat(const Pyramid& p, const std::vector<Box>& boxes, float img_w,
                     float img_h) const;

  ExperimentConfig cfg_;
  nn::ParamStore store_;
  Backbone backbone_;
  Fpn fpn_;
  RpnHead rpn_;
  RoiHead roi_;
  Ptg ptg_;
  bool has_ptg_ = false;
  bool training_ = false;
  bool timing_enabled_ = false;
  mutable Timing timing_;
};

}  // namespace refdet
