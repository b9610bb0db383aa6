#pragma once

#include <string>
#include <utility>
#include <vector>

#include "refdet/config.hpp"

namespace refdet {

struct CompareRow {
  std::string name;
  double map_clean = 0.0;
  double map_shifted = 0.0;
  double drop = 0.0;  // clean - shifted
  std::size_t params_total = 0;
  std::string run_dir;
};

// Per-variant parameter counts and forward-time shares, split by module.
struct ModuleAccount {
  std::string variant;
  std::size_t params_backbone = 0, params_fpn = 0, params_rpn = 0, params_roi = 0, params_ptg = 0;
  double time_backbone = 0, time_fpn = 0, time_rpn = 0, time_roi = 0, time_ptg = 0;  // seconds

  double time_total() const {
    return time_backbone + time_fpn + time_rpn + time_roi + time_ptg;
  }
  double ptg_share() const { return time_total() > 0 ? time_ptg / time_total() : 0.0; }
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::vector<ModuleAccount> modules;
  std::string table_text;
  std::string to_json() const;
};

// The ablation ladder derived from one base config: baseline, the three
// template-reference modes, pseudo-template generators, and the
// context-reference sweep.
std::vector<std::pair<std::string, ExperimentConfig>> standard_variants(
    const ExperimentConfig& base);

// Trains (or reuses cached runs keyed by train_key) and evaluates every
// variant on the clean and pixel-shifted test sets. All variants must share
// the dataset and seed. Writes compare.json / compare.txt under out_dir.
CompareResult compare_run(const std::vector<std::pair<std::string, ExperimentConfig>>& variants,
                          const std::string& out_dir, const std::string& cache_dir);

}  // namespace refdet
