#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refdet/config.hpp"
#include "refdet/geometry.hpp"
#include "refdet/image.hpp"
#include "refdet/rng.hpp"

namespace refdet {

struct SampleRecord {
  std::string image_path;     // relative to dataset root
  std::string template_path;  // empty when the sample is unpaired
  bool is_normal = false;
  std::string split;  // "train" or "test"
  std::vector<std::pair<Box, int>> boxes;  // category ids 1..c
};

struct DatasetManifest {
  int version = 1;
  std::vector<std::string> categories;
  std::uint64_t seed = 0;
  std::string config_hash;
  float pixel_mean = 127.0f;  // computed over generated train images
  float pixel_std = 50.0f;
  std::vector<SampleRecord> records;
  std::string root;  // directory holding manifest/images/templates

  std::vector<int> split_indices(const std::string& split) const;
  bool has_templates(const std::string& split) const;  // all records paired
};

// Writes `manifest` under root. Images are expected in place already.
void save_manifest(const DatasetManifest& m);

// Loads root/manifest and validates: version, category range, is_normal
// implies no boxes, every referenced file exists.
DatasetManifest load_manifest(const std::string& root);

// Renders the synthetic paired dataset into out_root (images/, templates/,
// manifest). Deterministic for a fixed config.
DatasetManifest synth_generate(const GenConfig& cfg, const std::string& out_root);

struct LoadedSample {
  Image image;
  Image tmpl;  // empty when unpaired
  bool is_normal = false;
  std::vector<std::pair<Box, int>> boxes;
};

LoadedSample load_sample(const DatasetManifest& m, const SampleRecord& r);

// Translates the image (never the template) by a random integer offset with
// per-axis magnitude in [min_px, max_px]; boxes follow and clip; reflection
// padding fills uncovered borders.
void apply_pixel_shift(LoadedSample& s, int min_px, int max_px, Rng& rng);

// Short edge to `min_target`, long edge capped at `max_size` (cap wins).
// Template and boxes receive the identical scale. Returns the scale factor.
float resize_sample(LoadedSample& s, int min_target, int max_size);
int sample_train_size(const DataConfig& d, Rng& rng);

}  // namespace refdet
