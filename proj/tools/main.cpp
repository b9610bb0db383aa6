#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "refdet/compare.hpp"
#include "refdet/config.hpp"
#include "refdet/dataset.hpp"
#include "refdet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace refdet;

namespace {

ExperimentConfig load_experiment(const std::string& config_path, std::int64_t seed,
                                 const std::string& out) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
  if (!out.empty()) cfg.out_dir = out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-based defect detector: data generation, training, "
               "evaluation, and the ablation harness"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, split = "test", cache_dir, variants_filter;
  std::int64_t seed = -1;
  bool shifted = false;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config_path, "config file (JSON)");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "output directory");
  };

  CLI::App* gen = app.add_subcommand("generate-data", "render the synthetic paired dataset");
  add_common(gen, false);
  gen->get_option("--out")->required();

  CLI::App* train = app.add_subcommand("train", "train a detector into the run directory");
  add_common(train, true);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (mAP@0.5)");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split, "dataset split (default test)");
  eval_cmd->add_flag("--shifted", shifted, "apply the pixel-shift corruption to the test images");

  CLI::App* predict = app.add_subcommand("predict", "export detections for a split");
  add_common(predict, true);
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--split", split, "dataset split (default test)");
  predict->get_option("--out")->required();

  CLI::App* render = app.add_subcommand("render", "export detections plus overlay images");
  add_common(render, true);
  render->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  render->add_option("--split", split, "dataset split (default test)");
  render->get_option("--out")->required();

  CLI::App* compare = app.add_subcommand(
      "compare", "train + evaluate the ablation ladder (clean and shifted test sets)");
  add_common(compare, true);
  compare->get_option("--out")->required();
  compare->add_option("--cache", cache_dir, "directory reused across runs for trained variants");
  compare->add_option("--variants", variants_filter,
                      "comma-separated subset of variant names (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      GenConfig g = config_path.empty() ? GenConfig{} : load_gen_config(config_path);
      if (seed >= 0) g.seed = static_cast<std::uint64_t>(seed);
      DatasetManifest m = synth_generate(g, out);
      std::cout << "generated " << m.records.size() << " samples under " << out << "\n";
      return 0;
    }
    if (train->parsed()) {
      ExperimentConfig cfg = load_experiment(config_path, seed, out);
      TrainResult r = train_run(cfg);
      std::cout << "trained " << r.steps << " steps; checkpoint: " << r.checkpoint_path << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      ExperimentConfig cfg = load_experiment(config_path, seed, out);
      eval_run(cfg, checkpoint, split, shifted, out.empty() ? cfg.out_dir : out);
      return 0;
    }
    if (predict->parsed() || render->parsed()) {
      ExperimentConfig cfg = load_experiment(config_path, seed, "");
      predict_run(cfg, checkpoint, split, out, render->parsed());
      std::cout << "detections written under " << out << "\n";
      return 0;
    }
    if (compare->parsed()) {
      ExperimentConfig cfg = load_experiment(config_path, seed, "");
      auto all = standard_variants(cfg);
      if (!variants_filter.empty()) {
        std::vector<std::pair<std::string, ExperimentConfig>> picked;
        std::string item;
        std::istringstream is(variants_filter);
        while (std::getline(is, item, ',')) {
          bool found = false;
          for (const auto& v : all) {
            if (v.first == item) {
              picked.push_back(v);
              found = true;
            }
          }
          if (!found) throw std::invalid_argument("unknown variant '" + item + "'");
        }
        all = std::move(picked);
      }
      compare_run(all, out, cache_dir.empty() ? (fs::path(out) / "cache").string() : cache_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
