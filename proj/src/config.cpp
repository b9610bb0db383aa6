#include "refdet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace refdet {

using nlohmann::json;

namespace {

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// Unknown keys are rejected so config typos never silently fall back to
// defaults.
void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void get_to_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void parse_data(const json& j, DataConfig& d) {
  check_keys(j,
             {"root", "train_min_size_lo", "train_min_size_hi", "test_min_size", "max_size",
              "pixel_mean", "pixel_std", "use_manifest_stats", "shift_min", "shift_max"},
             "data");
  get_to_if(j, "root", d.root);
  get_to_if(j, "train_min_size_lo", d.train_min_size_lo);
  get_to_if(j, "train_min_size_hi", d.train_min_size_hi);
  get_to_if(j, "test_min_size", d.test_min_size);
  get_to_if(j, "max_size", d.max_size);
  get_to_if(j, "pixel_mean", d.pixel_mean);
  get_to_if(j, "pixel_std", d.pixel_std);
  get_to_if(j, "use_manifest_stats", d.use_manifest_stats);
  get_to_if(j, "shift_min", d.shift_min);
  get_to_if(j, "shift_max", d.shift_max);
}

void parse_model(const json& j, ModelConfig& m) {
  check_keys(j,
             {"in_channels", "stage_channels", "blocks_per_stage", "norm", "fpn_channels",
              "num_classes", "anchor_sizes", "anchor_ratios", "rpn_pre_nms_topn",
              "rpn_post_nms_topn", "rpn_post_nms_topn_test", "rpn_nms_thresh", "roi_out_size",
              "roi_sampling", "fc_dim", "delta_stds", "tr_mode", "tr_stop_template_grad",
              "cr_enabled", "cr_k", "cr_share_fc", "cr_context_only", "ptg_hidden",
              "ptg_loss_mode", "ptg_loss_weight"},
             "model");
  get_to_if(j, "in_channels", m.in_channels);
  get_to_if(j, "stage_channels", m.stage_channels);
  get_to_if(j, "blocks_per_stage", m.blocks_per_stage);
  get_to_if(j, "norm", m.norm);
  get_to_if(j, "fpn_channels", m.fpn_channels);
  get_to_if(j, "num_classes", m.num_classes);
  get_to_if(j, "anchor_sizes", m.anchor_sizes);
  get_to_if(j, "anchor_ratios", m.anchor_ratios);
  get_to_if(j, "rpn_pre_nms_topn", m.rpn_pre_nms_topn);
  get_to_if(j, "rpn_post_nms_topn", m.rpn_post_nms_topn);
  get_to_if(j, "rpn_post_nms_topn_test", m.rpn_post_nms_topn_test);
  get_to_if(j, "rpn_nms_thresh", m.rpn_nms_thresh);
  get_to_if(j, "roi_out_size", m.roi_out_size);
  get_to_if(j, "roi_sampling", m.roi_sampling);
  get_to_if(j, "fc_dim", m.fc_dim);
  get_to_if(j, "delta_stds", m.delta_stds);
  get_to_if(j, "tr_mode", m.tr_mode);
  get_to_if(j, "tr_stop_template_grad", m.tr_stop_template_grad);
  get_to_if(j, "cr_enabled", m.cr_enabled);
  get_to_if(j, "cr_k", m.cr_k);
  get_to_if(j, "cr_share_fc", m.cr_share_fc);
  get_to_if(j, "cr_context_only", m.cr_context_only);
  get_to_if(j, "ptg_hidden", m.ptg_hidden);
  get_to_if(j, "ptg_loss_mode", m.ptg_loss_mode);
  get_to_if(j, "ptg_loss_weight", m.ptg_loss_weight);
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j,
             {"lr", "momentum", "weight_decay", "epochs", "images_per_step", "decay_epochs",
              "decay_factor", "warmup_iters", "grad_clip_norm", "rpn_batch", "rpn_pos_fraction",
              "roi_batch", "roi_pos", "rpn_pos_iou", "rpn_neg_iou", "roi_pos_iou", "log_every",
              "checkpoint_every", "eval_every", "seed"},
             "train");
  get_to_if(j, "lr", t.lr);
  get_to_if(j, "momentum", t.momentum);
  get_to_if(j, "weight_decay", t.weight_decay);
  get_to_if(j, "epochs", t.epochs);
  get_to_if(j, "images_per_step", t.images_per_step);
  get_to_if(j, "decay_epochs", t.decay_epochs);
  get_to_if(j, "decay_factor", t.decay_factor);
  get_to_if(j, "warmup_iters", t.warmup_iters);
  get_to_if(j, "grad_clip_norm", t.grad_clip_norm);
  get_to_if(j, "rpn_batch", t.rpn_batch);
  get_to_if(j, "rpn_pos_fraction", t.rpn_pos_fraction);
  get_to_if(j, "roi_batch", t.roi_batch);
  get_to_if(j, "roi_pos", t.roi_pos);
  get_to_if(j, "rpn_pos_iou", t.rpn_pos_iou);
  get_to_if(j, "rpn_neg_iou", t.rpn_neg_iou);
  get_to_if(j, "roi_pos_iou", t.roi_pos_iou);
  get_to_if(j, "log_every", t.log_every);
  get_to_if(j, "checkpoint_every", t.checkpoint_every);
  get_to_if(j, "eval_every", t.eval_every);
  get_to_if(j, "seed", t.seed);
}

void parse_eval(const json& j, EvalConfig& e) {
  check_keys(j, {"score_thresh", "nms_thresh", "max_dets", "eleven_point", "render_thresh"},
             "eval");
  get_to_if(j, "score_thresh", e.score_thresh);
  get_to_if(j, "nms_thresh", e.nms_thresh);
  get_to_if(j, "max_dets", e.max_dets);
  get_to_if(j, "eleven_point", e.eleven_point);
  get_to_if(j, "render_thresh", e.render_thresh);
}

json data_to_json(const DataConfig& d) {
  return json{{"root", d.root},
              {"train_min_size_lo", d.train_min_size_lo},
              {"train_min_size_hi", d.train_min_size_hi},
              {"test_min_size", d.test_min_size},
              {"max_size", d.max_size},
              {"pixel_mean", d.pixel_mean},
              {"pixel_std", d.pixel_std},
              {"use_manifest_stats", d.use_manifest_stats},
              {"shift_min", d.shift_min},
              {"shift_max", d.shift_max}};
}

json model_to_json(const ModelConfig& m) {
  return json{{"in_channels", m.in_channels},
              {"stage_channels", m.stage_channels},
              {"blocks_per_stage", m.blocks_per_stage},
              {"norm", m.norm},
              {"fpn_channels", m.fpn_channels},
              {"num_classes", m.num_classes},
              {"anchor_sizes", m.anchor_sizes},
              {"anchor_ratios", m.anchor_ratios},
              {"rpn_pre_nms_topn", m.rpn_pre_nms_topn},
              {"rpn_post_nms_topn", m.rpn_post_nms_topn},
              {"rpn_post_nms_topn_test", m.rpn_post_nms_topn_test},
              {"rpn_nms_thresh", m.rpn_nms_thresh},
              {"roi_out_size", m.roi_out_size},
              {"roi_sampling", m.roi_sampling},
              {"fc_dim", m.fc_dim},
              {"delta_stds", m.delta_stds},
              {"tr_mode", m.tr_mode},
              {"tr_stop_template_grad", m.tr_stop_template_grad},
              {"cr_enabled", m.cr_enabled},
              {"cr_k", m.cr_k},
              {"cr_share_fc", m.cr_share_fc},
              {"cr_context_only", m.cr_context_only},
              {"ptg_hidden", m.ptg_hidden},
              {"ptg_loss_mode", m.ptg_loss_mode},
              {"ptg_loss_weight", m.ptg_loss_weight}};
}

json train_to_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"epochs", t.epochs},
              {"images_per_step", t.images_per_step},
              {"decay_epochs", t.decay_epochs},
              {"decay_factor", t.decay_factor},
              {"warmup_iters", t.warmup_iters},
              {"grad_clip_norm", t.grad_clip_norm},
              {"rpn_batch", t.rpn_batch},
              {"rpn_pos_fraction", t.rpn_pos_fraction},
              {"roi_batch", t.roi_batch},
              {"roi_pos", t.roi_pos},
              {"rpn_pos_iou", t.rpn_pos_iou},
              {"rpn_neg_iou", t.rpn_neg_iou},
              {"roi_pos_iou", t.roi_pos_iou},
              {"log_every", t.log_every},
              {"checkpoint_every", t.checkpoint_every},
              {"eval_every", t.eval_every},
              {"seed", t.seed}};
}

json eval_to_json(const EvalConfig& e) {
  return json{{"score_thresh", e.score_thresh},
              {"nms_thresh", e.nms_thresh},
              {"max_dets", e.max_dets},
              {"eleven_point", e.eleven_point},
              {"render_thresh", e.render_thresh}};
}

}  // namespace

void ExperimentConfig::validate() const {
  std::vector<std::string> errs;
  auto bad = [&errs](const std::string& msg) { errs.push_back(msg); };

  static const std::set<std::string> kTrModes{"none", "pre", "inter", "post", "ptg-inter"};
  if (!kTrModes.count(model.tr_mode)) bad("model.tr_mode must be one of none/pre/inter/post/ptg-inter");
  if (model.norm != "batchnorm" && model.norm != "groupnorm" && model.norm != "none") {
    bad("model.norm must be batchnorm/groupnorm/none");
  }
  if (model.stage_channels.size() != 4) bad("model.stage_channels must list 4 stages");
  if (model.blocks_per_stage < 1) bad("model.blocks_per_stage must be >= 1");
  if (model.fpn_channels < 1) bad("model.fpn_channels must be positive");
  if (model.num_classes < 1) bad("model.num_classes must be >= 1");
  if (model.anchor_sizes.size() != 4) bad("model.anchor_sizes must list one size per level P2-P5");
  if (model.anchor_ratios.empty()) bad("model.anchor_ratios must be non-empty");
  if (model.cr_enabled && model.cr_k <= 1.0f) bad("model.cr_k must exceed 1 when cr_enabled");
  if (model.cr_context_only && !model.cr_enabled) bad("model.cr_context_only requires cr_enabled");
  if (model.ptg_loss_mode != "mse" && model.ptg_loss_mode != "l2") {
    bad("model.ptg_loss_mode must be mse or l2");
  }
  if (model.tr_mode == "ptg-inter" && model.ptg_hidden < 1) bad("model.ptg_hidden must be positive");

  if (data.train_min_size_lo > data.train_min_size_hi) {
    bad("data.train_min_size_lo must be <= train_min_size_hi");
  }
  if (data.pixel_std <= 0.0f) bad("data.pixel_std must be positive");
  if (data.shift_min > data.shift_max) bad("data.shift_min must be <= shift_max");

  if (train.epochs < 1) bad("train.epochs must be >= 1");
  if (train.images_per_step < 1) bad("train.images_per_step must be >= 1");
  if (train.lr <= 0.0f) bad("train.lr must be positive");
  if (train.grad_clip_norm < 0.0f) bad("train.grad_clip_norm must be >= 0");
  if (train.roi_pos > train.roi_batch) bad("train.roi_pos must be <= roi_batch");
  if (train.rpn_pos_iou <= train.rpn_neg_iou) bad("train.rpn_pos_iou must exceed rpn_neg_iou");

  if (eval.max_dets < 1) bad("eval.max_dets must be >= 1");

  if (!errs.empty()) {
    std::string all = "invalid config:";
    for (const auto& e : errs) all += "\n  - " + e;
    throw std::invalid_argument(all);
  }
}

std::string ExperimentConfig::fingerprint() const {
  std::ostringstream os;
  os << "in=" << model.in_channels << ";stages=";
  for (int c : model.stage_channels) os << c << ",";
  os << ";blocks=" << model.blocks_per_stage << ";norm=" << model.norm
     << ";fpn=" << model.fpn_channels << ";classes=" << model.num_classes << ";ratios=";
  for (float r : model.anchor_ratios) os << r << ",";
  os << ";roi=" << model.roi_out_size << ";fc=" << model.fc_dim
     << ";cr=" << (model.cr_enabled ? 1 : 0) << ";cr_share=" << (model.cr_share_fc ? 1 : 0)
     << ";cr_ctx_only=" << (model.cr_context_only ? 1 : 0);
  return fnv1a(os.str());
}

std::string ExperimentConfig::train_key() const {
  ExperimentConfig c = *this;
  if (c.model.tr_mode == "post") c.model.tr_mode = "none";  // trains as baseline
  c.out_dir.clear();
  json j{{"data", data_to_json(c.data)},
         {"model", model_to_json(c.model)},
         {"train", train_to_json(c.train)}};
  return fnv1a(j.dump());
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  check_keys(j, {"data", "model", "train", "eval", "out_dir"}, "top level");
  ExperimentConfig cfg;
  try {
    if (j.contains("data")) parse_data(j.at("data"), cfg.data);
    if (j.contains("model")) parse_model(j.at("model"), cfg.model);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);
    if (j.contains("out_dir")) j.at("out_dir").get_to(cfg.out_dir);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: type error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j{{"data", data_to_json(cfg.data)},
         {"model", model_to_json(cfg.model)},
         {"train", train_to_json(cfg.train)},
         {"eval", eval_to_json(cfg.eval)},
         {"out_dir", cfg.out_dir}};
  return j.dump(2) + "\n";
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  os << config_to_json_text(cfg);
}

void GenConfig::validate() const {
  if (count_train + count_test <= 0) throw std::invalid_argument("generator: zero-image config");
  if (image_size < 32) throw std::invalid_argument("generator: image_size must be >= 32");
  if (normal_fraction < 0.0f || normal_fraction > 1.0f) {
    throw std::invalid_argument("generator: normal_fraction must be in [0,1]");
  }
  if (noise_sigma < 0.0f) throw std::invalid_argument("generator: noise_sigma must be >= 0");
  if (max_defects < 1) throw std::invalid_argument("generator: max_defects must be >= 1");
  if (defect_contrast_lo > defect_contrast_hi || defect_contrast_lo <= 0.0f) {
    throw std::invalid_argument("generator: bad defect contrast range");
  }
  static const std::set<std::string> kTex{"stripes", "checkers", "noise", "solid"};
  if (textures.empty()) throw std::invalid_argument("generator: textures must be non-empty");
  for (const auto& t : textures) {
    if (!kTex.count(t)) throw std::invalid_argument("generator: unknown texture " + t);
  }
}

std::string GenConfig::hash() const { return fnv1a(gen_config_to_json_text(*this)); }

GenConfig gen_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("generator config: parse error: ") + e.what());
  }
  check_keys(j,
             {"image_size", "count_train", "count_test", "normal_fraction", "noise_sigma",
              "max_defects", "defect_contrast_lo", "defect_contrast_hi", "test_texture_shift",
              "textures", "seed"},
             "generator");
  GenConfig g;
  try {
    get_to_if(j, "image_size", g.image_size);
    get_to_if(j, "count_train", g.count_train);
    get_to_if(j, "count_test", g.count_test);
    get_to_if(j, "normal_fraction", g.normal_fraction);
    get_to_if(j, "noise_sigma", g.noise_sigma);
    get_to_if(j, "max_defects", g.max_defects);
    get_to_if(j, "defect_contrast_lo", g.defect_contrast_lo);
    get_to_if(j, "defect_contrast_hi", g.defect_contrast_hi);
    get_to_if(j, "test_texture_shift", g.test_texture_shift);
    get_to_if(j, "textures", g.textures);
    get_to_if(j, "seed", g.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("generator config: type error: ") + e.what());
  }
  g.validate();
  return g;
}

GenConfig load_gen_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("generator config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return gen_config_from_json_text(ss.str());
}

std::string gen_config_to_json_text(const GenConfig& cfg) {
  json j{{"image_size", cfg.image_size},
         {"count_train", cfg.count_train},
         {"count_test", cfg.count_test},
         {"normal_fraction", cfg.normal_fraction},
         {"noise_sigma", cfg.noise_sigma},
         {"max_defects", cfg.max_defects},
         {"defect_contrast_lo", cfg.defect_contrast_lo},
         {"defect_contrast_hi", cfg.defect_contrast_hi},
         {"test_texture_shift", cfg.test_texture_shift},
         {"textures", cfg.textures},
         {"seed", cfg.seed}};
  return j.dump(2) + "\n";
}

}  // namespace refdet
