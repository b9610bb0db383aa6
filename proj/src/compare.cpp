#include "refdet/compare.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "refdet/pipeline.hpp"

namespace refdet {

namespace fs = std::filesystem;

std::vector<std::pair<std::string, ExperimentConfig>> standard_variants(
    const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  auto push = [&](const std::string& name, auto&& mutate) {
    ExperimentConfig c = base;
    c.model.tr_mode = "none";
    c.model.cr_enabled = false;
    c.model.cr_context_only = false;
    mutate(c);
    out.emplace_back(name, std::move(c));
  };
  push("baseline", [](ExperimentConfig&) {});
  push("tr-pre", [](ExperimentConfig& c) { c.model.tr_mode = "pre"; });
  push("tr-inter", [](ExperimentConfig& c) { c.model.tr_mode = "inter"; });
  push("tr-post", [](ExperimentConfig& c) { c.model.tr_mode = "post"; });
  push("ptg-inter", [](ExperimentConfig& c) { c.model.tr_mode = "ptg-inter"; });
  push("cr-1.3", [](ExperimentConfig& c) {
    c.model.cr_enabled = true;
    c.model.cr_k = 1.3f;
  });
  push("cr-1.5", [](ExperimentConfig& c) {
    c.model.cr_enabled = true;
    c.model.cr_k = 1.5f;
  });
  push("cr-1.7", [](ExperimentConfig& c) {
    c.model.cr_enabled = true;
    c.model.cr_k = 1.7f;
  });
  push("cr-context-only", [](ExperimentConfig& c) {
    c.model.cr_enabled = true;
    c.model.cr_k = 1.5f;
    c.model.cr_context_only = true;
  });
  return out;
}

namespace {

// Reuses a finished cached run when its resolved config carries the same
// training key; anything else (stale lock, missing checkpoint) is retrained.
std::string ensure_trained(const ExperimentConfig& cfg, const std::string& cache_dir) {
  const std::string key = cfg.train_key();
  const fs::path run_dir = fs::path(cache_dir) / ("run_" + key);
  const fs::path ckpt = run_dir / "checkpoints" / "final.ckpt";

  if (fs::exists(ckpt) && !fs::exists(run_dir / ".lock")) {
    try {
      ExperimentConfig cached = load_config((run_dir / "config.resolved").string());
      if (cached.train_key() == key) return ckpt.string();
    } catch (const std::exception&) {
      // fall through to retrain
    }
  }
  if (fs::exists(run_dir)) fs::remove_all(run_dir);

  ExperimentConfig train_cfg = cfg;
  if (train_cfg.model.tr_mode == "post") train_cfg.model.tr_mode = "none";
  train_cfg.out_dir = run_dir.string();
  std::cerr << "[compare] training " << key << " (" << train_cfg.model.tr_mode
            << (train_cfg.model.cr_enabled ? ", cr" : "") << ")\n";
  train_run(train_cfg);
  return ckpt.string();
}

}  // namespace

CompareResult compare_run(const std::vector<std::pair<std::string, ExperimentConfig>>& variants,
                          const std::string& out_dir, const std::string& cache_dir) {
  if (variants.empty()) throw std::invalid_argument("compare: no variants given");
  const std::string root = variants.front().second.data.root;
  const std::uint64_t seed = variants.front().second.train.seed;
  for (const auto& [name, cfg] : variants) {
    cfg.validate();
    if (cfg.data.root != root) {
      throw std::invalid_argument("compare: variant '" + name + "' uses a different dataset");
    }
    if (cfg.train.seed != seed) {
      throw std::invalid_argument("compare: variant '" + name + "' uses a different seed");
    }
  }

  fs::create_directories(out_dir);
  fs::create_directories(cache_dir);
  const DatasetManifest manifest = load_manifest(root);
  const std::uint64_t shift_seed = seed + 1000;  // same offsets for every variant

  CompareResult result;
  for (const auto& [name, cfg] : variants) {
    const std::string ckpt = ensure_trained(cfg, cache_dir);

    Detector det(cfg);
    det.load(ckpt);
    EvalRunResult clean = eval_split(det, manifest, "test", cfg, false, shift_seed);
    EvalRunResult shifted = eval_split(det, manifest, "test", cfg, true, shift_seed);

    CompareRow row;
    row.name = name;
    row.map_clean = clean.report.map;
    row.map_shifted = shifted.report.map;
    row.drop = clean.report.map - shifted.report.map;
    row.params_total = det.store().param_count();
    row.run_dir = fs::path(ckpt).parent_path().parent_path().string();
    result.rows.push_back(row);

    ModuleAccount acc;
    acc.variant = name;
    acc.params_backbone = det.store().param_count_prefix("backbone/");
    acc.params_fpn = det.store().param_count_prefix("fpn/");
    acc.params_rpn = det.store().param_count_prefix("rpn/");
    acc.params_roi = det.store().param_count_prefix("roi/");
    acc.params_ptg = det.store().param_count_prefix("ptg/");
    acc.time_backbone = clean.timing.backbone;
    acc.time_fpn = clean.timing.fpn;
    acc.time_rpn = clean.timing.rpn;
    acc.time_roi = clean.timing.roi;
    acc.time_ptg = clean.timing.ptg;
    result.modules.push_back(acc);
  }

  std::ostringstream table;
  table << "variant             params      mAP@0.5   mAP@0.5(shift)   drop\n";
  for (const auto& r : result.rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-18s %9zu      %6.4f          %6.4f  %+.4f\n",
                  r.name.c_str(), r.params_total, r.map_clean, r.map_shifted, r.drop);
    table << line;
  }
  table << "\nmodule accounting (params / forward-time share on the clean test pass)\n";
  for (const auto& m : result.modules) {
    const double t = m.time_total();
    char line[240];
    std::snprintf(line, sizeof(line),
                  "%-18s backbone %zu/%.0f%%  fpn %zu/%.0f%%  rpn %zu/%.0f%%  roi %zu/%.0f%%  "
                  "ptg %zu/%.0f%%\n",
                  m.variant.c_str(), m.params_backbone,
                  t > 0 ? 100.0 * m.time_backbone / t : 0.0, m.params_fpn,
                  t > 0 ? 100.0 * m.time_fpn / t : 0.0, m.params_rpn,
                  t > 0 ? 100.0 * m.time_rpn / t : 0.0, m.params_roi,
                  t > 0 ? 100.0 * m.time_roi / t : 0.0, m.params_ptg,
                  t > 0 ? 100.0 * m.time_ptg / t : 0.0);
    table << line;
  }
  result.table_text = table.str();

  std::ofstream tf(fs::path(out_dir) / "compare.txt");
  tf << result.table_text;
  std::ofstream jf(fs::path(out_dir) / "compare.json");
  jf << result.to_json() << "\n";
  std::cout << result.table_text;
  return result;
}

std::string CompareResult::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rows_j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"name", r.name},
                      {"map_clean", r.map_clean},
                      {"map_shifted", r.map_shifted},
                      {"drop", r.drop},
                      {"params_total", r.params_total},
                      {"run_dir", r.run_dir}});
  }
  j["rows"] = rows_j;
  nlohmann::ordered_json mods = nlohmann::ordered_json::array();
  for (const auto& m : modules) {
    mods.push_back({{"variant", m.variant},
                    {"params",
                     {{"backbone", m.params_backbone},
                      {"fpn", m.params_fpn},
                      {"rpn", m.params_rpn},
                      {"roi", m.params_roi},
                      {"ptg", m.params_ptg}}},
                    {"time_seconds",
                     {{"backbone", m.time_backbone},
                      {"fpn", m.time_fpn},
                      {"rpn", m.time_rpn},
                      {"roi", m.time_roi},
                      {"ptg", m.time_ptg}}},
                    {"ptg_time_share", m.ptg_share()}});
  }
  j["modules"] = mods;
  return j.dump(2);
}

}  // namespace refdet
