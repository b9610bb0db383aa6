#include "refdet/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include "refdet/checkpoint.hpp"

namespace refdet {

namespace {

using Clock = std::chrono::steady_clock;

struct SectionTimer {
  SectionTimer(bool enabled, double& sink) : enabled_(enabled), sink_(sink) {
    if (enabled_) start_ = Clock::now();
  }
  ~SectionTimer() {
    if (enabled_) {
      sink_ += std::chrono::duration<double>(Clock::now() - start_).count();
    }
  }
  bool enabled_;
  double& sink_;
  Clock::time_point start_;
};

}  // namespace

Tensor image_to_tensor(const Image& img) {
  Tensor t = Tensor::zeros({1, img.c, img.h, img.w});
  std::copy(img.pix.begin(), img.pix.end(), t.data());
  return t;
}

Tensor mean_pre(const Tensor& img, float mean, float stddev) {
  if (stddev <= 0.0f) throw std::invalid_argument("mean_pre: stddev must be positive");
  return scale(sub(img, Tensor::full(img.shape(), mean)), 1.0f / stddev);
}

Tensor tr_pre(const Tensor& img, const Tensor& tmpl, float stddev) {
  if (stddev <= 0.0f) throw std::invalid_argument("tr_pre: stddev must be positive");
  if (img.shape() != tmpl.shape()) {
    throw std::invalid_argument("tr_pre: image " + shape_str(img.shape()) + " vs template " +
                                shape_str(tmpl.shape()));
  }
  return scale(sub(img, tmpl), 1.0f / (2.0f * stddev));
}

std::vector<float> cosine_rows(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || a.shape() != b.shape()) {
    throw std::invalid_argument("cosine_rows: shape mismatch");
  }
  int n = a.dim(0), d = a.dim(1);
  std::vector<float> out(n);
  for (int i = 0; i < n; ++i) {
    const float* pa = a.data() + static_cast<std::size_t>(i) * d;
    const float* pb = b.data() + static_cast<std::size_t>(i) * d;
    double dot = 0, na = 0, nb = 0;
    for (int j = 0; j < d; ++j) {
      dot += static_cast<double>(pa[j]) * pb[j];
      na += static_cast<double>(pa[j]) * pa[j];
      nb += static_cast<double>(pb[j]) * pb[j];
    }
    // Zero-norm embeddings count as maximally dissimilar.
    out[i] = (na <= 0.0 || nb <= 0.0) ? 0.0f : static_cast<float>(dot / std::sqrt(na * nb));
  }
  return out;
}

std::vector<float> tr_post_rescore(const std::vector<float>& scores, int classes_plus_bg,
                                   const Tensor& region_embed, const Tensor& template_embed) {
  int n = region_embed.dim(0);
  if (scores.size() != static_cast<std::size_t>(n) * classes_plus_bg) {
    throw std::invalid_argument("tr_post_rescore: score shape mismatch");
  }
  std::vector<float> cos = cosine_rows(region_embed, template_embed);
  std::vector<float> out(scores.size());
  for (int i = 0; i < n; ++i) {
    float f = 1.0f - cos[i];
    for (int j = 0; j < classes_plus_bg; ++j) {
      out[static_cast<std::size_t>(i) * classes_plus_bg + j] =
          scores[static_cast<std::size_t>(i) * classes_plus_bg + j] * f;
    }
  }
  return out;
}

// -- backbone ---------------------------------------------------------------

Backbone::Backbone(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  int c0 = cfg.stage_channels[0];
  stem_.conv = nn::Conv2d(store, "backbone/stem", cfg.in_channels, c0, 3, 2, 1, rng);
  stem_.norm = nn::Norm2d(store, "backbone/stem.norm", c0, cfg.norm);
  int prev = c0;
  stages_.resize(4);
  for (int s = 0; s < 4; ++s) {
    int ch = cfg.stage_channels[s];
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      std::string name = "backbone/s" + std::to_string(s + 2) + ".b" + std::to_string(b);
      Block blk;
      int stride = b == 0 ? 2 : 1;
      int cin = b == 0 ? prev : ch;
      blk.conv = nn::Conv2d(store, name, cin, ch, 3, stride, 1, rng);
      blk.norm = nn::Norm2d(store, name + ".norm", ch, cfg.norm);
      stages_[s].push_back(std::move(blk));
    }
    prev = ch;
  }
}

StageFeatures Backbone::forward(const Tensor& x, bool training) {
  if (x.dim(2) < 32 || x.dim(3) < 32) {
    throw std::invalid_argument("backbone: input below 32x32 leaves no stride-32 features");
  }
  Tensor h = relu(stem_.norm.forward(stem_.conv.forward(x), training));
  StageFeatures out;
  for (int s = 0; s < 4; ++s) {
    for (auto& blk : stages_[s]) {
      h = relu(blk.norm.forward(blk.conv.forward(h), training));
    }
    out.c[s] = h;
  }
  return out;
}

// -- fpn ---------------------------------------------------------------------

Fpn::Fpn(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  for (int i = 0; i < 4; ++i) {
    lateral_[i] = nn::Conv2d(store, "fpn/lat" + std::to_string(i + 2), cfg.stage_channels[i],
                             cfg.fpn_channels, 1, 1, 0, rng);
  }
  shared_out_ = nn::Conv2d(store, "fpn/out_shared", cfg.fpn_channels, cfg.fpn_channels, 3, 1, 1,
                           rng);
}

Pyramid Fpn::forward(const StageFeatures& s) const {
  std::array<Tensor, 4> lat;
  for (int i = 0; i < 4; ++i) lat[i] = lateral_[i].forward(s.c[i]);
  // Top-down: L5 stands alone, lower levels add the upsampled map above.
  std::array<Tensor, 4> merged;
  merged[3] = lat[3];
  for (int i = 2; i >= 0; --i) {
    merged[i] = add(lat[i], bilinear_resize(merged[i + 1], lat[i].dim(2), lat[i].dim(3)));
  }
  Pyramid p;
  for (int i = 0; i < 4; ++i) p[i] = shared_out_.forward(merged[i]);
  return p;
}

// -- rpn ----------------------------------------------------------------------

RpnHead::RpnHead(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng)
    : num_ratios_(static_cast<int>(cfg.anchor_ratios.size())) {
  conv_ = nn::Conv2d(store, "rpn/conv", cfg.fpn_channels, cfg.fpn_channels, 3, 1, 1, rng,
                     nn::Init::kNormal001);
  obj_ = nn::Conv2d(store, "rpn/obj", cfg.fpn_channels, num_ratios_, 1, 1, 0, rng,
                    nn::Init::kNormal001);
  reg_ = nn::Conv2d(store, "rpn/reg", cfg.fpn_channels, num_ratios_ * 4, 1, 1, 0, rng,
                    nn::Init::kNormal001);
}

RpnOut RpnHead::forward(const Pyramid& p) const {
  std::vector<Tensor> logit_parts, delta_parts;
  RpnOut out;
  for (const Tensor& level : p) {
    Tensor h = relu(conv_.forward(level));
    Tensor lg = obj_.forward(h);   // [1, A, H, W]
    Tensor dl = reg_.forward(h);   // [1, 4A, H, W]
    int fh = lg.dim(2), fw = lg.dim(3);
    out.level_shapes.push_back({fh, fw});
    int cells = fh * fw;
    // [1, A*K, H, W] -> [A*K, HW] -> [HW, A*K] -> [HW*A, K]: cell-major rows,
    // matching the (y, x, ratio) anchor order.
    Tensor lg2 = reshape(transpose2d(reshape(lg, {num_ratios_, cells})), {cells * num_ratios_, 1});
    Tensor dl2 = reshape(transpose2d(reshape(dl, {num_ratios_ * 4, cells})),
                         {cells * num_ratios_, 4});
    logit_parts.push_back(lg2);
    delta_parts.push_back(dl2);
  }
  out.logits = concat_rows(logit_parts);
  out.deltas = concat_rows(delta_parts);
  return out;
}

// -- ptg -----------------------------------------------------------------------

PtgStage::PtgStage(nn::ParamStore& store, const std::string& name, int channels, int hidden,
                   Rng& rng) {
  e1_ = nn::Conv2d(store, name + "/e1", channels, hidden, 3, 1, 1, rng);
  e2_ = nn::Conv2d(store, name + "/e2", hidden, hidden, 3, 2, 1, rng);
  e3_ = nn::Conv2d(store, name + "/e3", hidden, hidden, 3, 2, 1, rng);
  d1_ = nn::Deconv2d(store, name + "/d1", hidden, hidden, 3, 2, 1, rng);
  d2_ = nn::Deconv2d(store, name + "/d2", hidden, hidden, 3, 2, 1, rng);
  d3_ = nn::Deconv2d(store, name + "/d3", hidden, channels, 3, 1, 1, rng);
}

Tensor PtgStage::forward(const Tensor& x) const {
  int h0 = x.dim(2), w0 = x.dim(3);
  Tensor h = relu(e1_.forward(x));
  h = relu(e2_.forward(h));
  int h1 = h.dim(2), w1 = h.dim(3);
  h = relu(e3_.forward(h));
  // Decoder mirrors the encoder sizes exactly, odd shapes included.
  h = relu(d1_.forward(h, h1, w1));
  h = relu(d2_.forward(h, h0, w0));
  return d3_.forward(h, h0, w0);  // linear output: features are signed
}

Ptg::Ptg(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  for (int i = 0; i < 4; ++i) {
    stages_[i] = PtgStage(store, "ptg/g" + std::to_string(i + 2), cfg.stage_channels[i],
                          cfg.ptg_hidden, rng);
  }
}

StageFeatures Ptg::forward(const StageFeatures& s) const {
  StageFeatures out;
  // Channel mismatches surface inside conv2d with a shape message.
  for (int i = 0; i < 4; ++i) out.c[i] = stages_[i].forward(s.c[i]);
  return out;
}

Tensor ptg_reconstruction_loss(const StageFeatures& normal_stages, const Ptg& ptg,
                               const std::string& mode) {
  StageFeatures rec = ptg.forward(normal_stages);
  Tensor total = Tensor::scalar(0.0f);
  for (int i = 0; i < 4; ++i) {
    Tensor diff = sub(normal_stages.c[i], rec.c[i]);
    Tensor sq = sum_all(mul(diff, diff));
    if (mode == "l2") {
      total = add(total, sqrt_elem(sq));
    } else if (mode == "mse") {
      total = add(total, scale(sq, 1.0f / static_cast<float>(diff.numel())));
    } else {
      throw std::invalid_argument("ptg loss mode must be mse or l2");
    }
  }
  return total;
}

// -- roi head ---------------------------------------------------------------

RoiHead::RoiHead(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng)
    : cr_enabled_(cfg.cr_enabled),
      cr_share_(cfg.cr_share_fc),
      cr_context_only_(cfg.cr_context_only) {
  int flat = cfg.fpn_channels * cfg.roi_out_size * cfg.roi_out_size;
  fc1_ = nn::Linear(store, "roi/fc1", flat, cfg.fc_dim, rng);
  fc2_ = nn::Linear(store, "roi/fc2", cfg.fc_dim, cfg.fc_dim, rng);
  if (cr_enabled_ && !cr_share_) {
    ctx_fc1_ = nn::Linear(store, "roi/ctx_fc1", flat, cfg.fc_dim, rng);
    ctx_fc2_ = nn::Linear(store, "roi/ctx_fc2", cfg.fc_dim, cfg.fc_dim, rng);
  }
  int head_in = cfg.fc_dim;
  if (cr_enabled_) head_in = cr_context_only_ ? cfg.fc_dim : cfg.fc_dim * 2;
  cls_ = nn::Linear(store, "roi/cls", head_in, cfg.num_classes + 1, rng, nn::Init::kNormal001);
  reg_ = nn::Linear(store, "roi/reg", head_in, cfg.num_classes * 4, rng, nn::Init::kNormal001);
}

Tensor RoiHead::embed_only(const Tensor& region_flat) const {
  return relu(fc2_.forward(relu(fc1_.forward(region_flat))));
}

RoiOut RoiHead::forward(const Tensor& region_flat, const Tensor& context_flat) const {
  RoiOut out;
  out.embed = embed_only(region_flat);
  Tensor head_in = out.embed;
  if (cr_enabled_) {
    if (!context_flat.defined()) {
      throw std::invalid_argument("roi head: context features required when CR is enabled");
    }
    Tensor ctx = cr_share_ ? embed_only(context_flat)
                           : relu(ctx_fc2_.forward(relu(ctx_fc1_.forward(context_flat))));
    head_in = cr_context_only_ ? ctx : concat_cols(out.embed, ctx);
  }
  out.cls_logits = cls_.forward(head_in);
  out.deltas = reg_.forward(head_in);
  return out;
}

// -- detector ------------------------------------------------------------------

Detector::Detector(const ExperimentConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg.train.seed ^ 0xabcdef12345ull);
  backbone_ = Backbone(store_, cfg_.model, rng);
  fpn_ = Fpn(store_, cfg_.model, rng);
  rpn_ = RpnHead(store_, cfg_.model, rng);
  roi_ = RoiHead(store_, cfg_.model, rng);
  if (cfg_.model.tr_mode == "ptg-inter") {
    ptg_ = Ptg(store_, cfg_.model, rng);
    has_ptg_ = true;
  }
}

StageFeatures Detector::backbone_stages(const Tensor& input) {
  SectionTimer t(timing_enabled_, timing_.backbone);
  return backbone_.forward(input, training_);
}

Pyramid Detector::forward_pyramid(const Tensor& input, const Tensor* template_input) {
  const std::string& mode = cfg_.model.tr_mode;
  StageFeatures si = backbone_stages(input);
  if (mode == "inter") {
    if (!template_input) throw std::invalid_argument("tr_mode inter requires a template input");
    StageFeatures st;
    if (cfg_.model.tr_stop_template_grad) {
      NoGradGuard ng;
      st = backbone_stages(*template_input);
    } else {
      st = backbone_stages(*template_input);
    }
    for (int i = 0; i < 4; ++i) si.c[i] = sub(si.c[i], st.c[i]);
  } else if (mode == "ptg-inter") {
    StageFeatures pseudo;
    {
      SectionTimer t(timing_enabled_, timing_.ptg);
      pseudo = ptg_.forward(si);
    }
    for (int i = 0; i < 4; ++i) si.c[i] = sub(si.c[i], pseudo.c[i]);
  }
  SectionTimer t(timing_enabled_, timing_.fpn);
  return fpn_.forward(si);
}

AnchorGrid Detector::anchors_for(const std::vector<std::array<int, 2>>& level_shapes) const {
  std::vector<int> strides(kStrides.begin(), kStrides.end());
  return generate_anchor_grid(level_shapes, strides, cfg_.model.anchor_sizes,
                              cfg_.model.anchor_ratios);
}

std::vector<Proposal> Detector::proposals(const RpnOut& out, const AnchorGrid& anchors,
                                          float img_w, float img_h, bool training) const {
  NoGradGuard ng;
  std::vector<Box> all_boxes;
  std::vector<float> all_scores;
  std::size_t total = 0;
  for (const auto& lv : anchors.levels) total += lv.size();
  if (out.logits.dim(0) != static_cast<int>(total)) {
    throw std::invalid_argument("proposals: rpn output does not match anchor count");
  }
  all_boxes.reserve(total);
  all_scores.reserve(total);
  const float clamp = std::log(1000.0f / 16.0f);
  std::size_t idx = 0;
  for (const auto& lv : anchors.levels) {
    for (const Box& a : lv) {
      BoxDeltas d{out.deltas.at(idx * 4 + 0), out.deltas.at(idx * 4 + 1),
                  out.deltas.at(idx * 4 + 2), out.deltas.at(idx * 4 + 3)};
      Box b = clip_box(decode_deltas(a, d, clamp), img_w, img_h);
      all_boxes.push_back(b);
      all_scores.push_back(out.logits.at(idx));  // monotone in sigmoid: rank by logit
      ++idx;
    }
  }
  // Top pre-NMS candidates by objectness.
  std::vector<int> order(all_boxes.size());
  std::iota(order.begin(), order.end(), 0);
  int pre = std::min<int>(cfg_.model.rpn_pre_nms_topn, static_cast<int>(order.size()));
  std::partial_sort(order.begin(), order.begin() + pre, order.end(),
                    [&](int a, int b) {
                      if (all_scores[a] != all_scores[b]) return all_scores[a] > all_scores[b];
                      return a < b;
                    });
  order.resize(pre);

  std::vector<Box> cand;
  std::vector<float> cand_scores;
  cand.reserve(order.size());
  for (int i : order) {
    const Box& b = all_boxes[i];
    if (b.width() <= 0.0f || b.height() <= 0.0f) continue;  // fully clipped away
    cand.push_back(b);
    cand_scores.push_back(all_scores[i]);
  }
  std::vector<int> keep = nms(cand, cand_scores, cfg_.model.rpn_nms_thresh);
  int post = training ? cfg_.model.rpn_post_nms_topn : cfg_.model.rpn_post_nms_topn_test;
  if (static_cast<int>(keep.size()) > post) keep.resize(post);

  std::vector<Proposal> props;
  props.reserve(keep.size());
  for (int i : keep) {
    props.push_back(Proposal{cand[i], 1.0f / (1.0f + std::exp(-cand_scores[i]))});
  }
  return props;
}

Tensor Detector::pooled_flat(const Pyramid& p, const std::vector<Box>& boxes, float img_w,
                             float img_h) const {
  (void)img_w;
  (void)img_h;
  int S = cfg_.model.roi_out_size;
  int C = cfg_.model.fpn_channels;
  // Group boxes by pyramid level, pool per level, then restore input order.
  std::array<std::vector<std::array<float, 4>>, 4> by_level;
  std::array<std::vector<int>, 4> order_by_level;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    float w = std::max(b.width(), 1.0f);
    float h = std::max(b.height(), 1.0f);
    int level = map_level(w, h) - 2;
    by_level[level].push_back({b.x1, b.y1, b.x2, b.y2});
    order_by_level[level].push_back(static_cast<int>(i));
  }
  std::vector<Tensor> parts;
  std::vector<int> concat_order;
  for (int l = 0; l < 4; ++l) {
    if (by_level[l].empty()) continue;
    Tensor pooled = roi_align(p[l], by_level[l], 1.0f / kStrides[l], S, cfg_.model.roi_sampling);
    parts.push_back(reshape(pooled, {static_cast<int>(by_level[l].size()), C * S * S}));
    concat_order.insert(concat_order.end(), order_by_level[l].begin(), order_by_level[l].end());
  }
  Tensor stacked = parts.size() == 1 ? parts[0] : concat_rows(parts);
  // concat_order[j] = original index of stacked row j; invert for gather.
  std::vector<int> inverse(boxes.size());
  for (std::size_t j = 0; j < concat_order.size(); ++j) inverse[concat_order[j]] = static_cast<int>(j);
  return gather_rows(stacked, inverse);
}

RoiOut Detector::roi_forward(const Pyramid& p, const std::vector<Box>& boxes, float img_w,
                             float img_h) const {
  if (boxes.empty()) throw std::invalid_argument("roi_forward: no boxes");
  SectionTimer t(timing_enabled_, timing_.roi);
  Tensor region = pooled_flat(p, boxes, img_w, img_h);
  Tensor context;
  if (cfg_.model.cr_enabled) {
    std::vector<Box> ctx_boxes;
    ctx_boxes.reserve(boxes.size());
    for (const Box& b : boxes) {
      ctx_boxes.push_back(context_box(b, cfg_.model.cr_k, img_w, img_h));
    }
    context = pooled_flat(p, ctx_boxes, img_w, img_h);
  }
  return roi_.forward(region, context);
}

Tensor Detector::roi_embed(const Pyramid& p, const std::vector<Box>& boxes, float img_w,
                           float img_h) const {
  if (boxes.empty()) throw std::invalid_argument("roi_embed: no boxes");
  SectionTimer t(timing_enabled_, timing_.roi);
  return roi_.embed_only(pooled_flat(p, boxes, img_w, img_h));
}

std::vector<Tensor> Detector::trainable_params() const { return store_.param_tensors(); }

void Detector::save(const std::string& path) const {
  save_checkpoint(path, cfg_.fingerprint(), store_.params(), store_.buffers());
}

void Detector::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.fingerprint != cfg_.fingerprint()) {
    throw std::runtime_error("checkpoint fingerprint " + ck.fingerprint +
                             " does not match config fingerprint " + cfg_.fingerprint());
  }
  auto apply = [](const CheckpointEntry& e, Tensor t, const std::string& name) {
    if (e.shape != t.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               shape_str(e.shape) + " vs model " + shape_str(t.shape()));
    }
    std::copy(e.data.begin(), e.data.end(), t.data());
  };
  std::size_t ptg_fresh = 0;
  for (const auto& [name, t] : store_.params()) {
    const CheckpointEntry* e = ck.find(name);
    if (!e) {
      if (name.rfind("ptg/", 0) == 0) {
        ++ptg_fresh;  // PTG enabled now, absent in the file: keep fresh init
        continue;
      }
      throw std::runtime_error("checkpoint: missing parameter " + name);
    }
    apply(*e, t, name);
  }
  for (const auto& [name, t] : store_.buffers()) {
    const CheckpointEntry* e = ck.find("buffer/" + name);
    if (!e) throw std::runtime_error("checkpoint: missing buffer " + name);
    apply(*e, t, name);
  }
  if (ptg_fresh > 0) {
    std::cerr << "[load] " << ptg_fresh
              << " generator parameters not in checkpoint; keeping fresh initialization\n";
  }
  std::size_t ignored = 0;
  for (const auto& e : ck.entries) {
    if (e.name.rfind("ptg/", 0) == 0 && !has_ptg_) ++ignored;
  }
  if (ignored > 0) {
    std::cerr << "[load] ignoring " << ignored
              << " generator parameters in checkpoint (generators disabled in config)\n";
  }
}

}  // namespace refdet
