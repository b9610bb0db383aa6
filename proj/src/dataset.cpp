#include "refdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace refdet {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::vector<int> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(records.size()); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

bool DatasetManifest::has_templates(const std::string& split) const {
  bool any = false;
  for (const auto& r : records) {
    if (r.split != split) continue;
    any = true;
    if (r.template_path.empty()) return false;
  }
  return any;
}

namespace {

ordered_json record_to_json(const SampleRecord& r) {
  ordered_json j;
  j["image"] = r.image_path;
  j["template"] = r.template_path;
  j["is_normal"] = r.is_normal;
  j["split"] = r.split;
  ordered_json boxes = ordered_json::array();
  for (const auto& [b, cat] : r.boxes) {
    boxes.push_back({b.x1, b.y1, b.x2, b.y2, cat});
  }
  j["boxes"] = boxes;
  return j;
}

SampleRecord record_from_json(const ordered_json& j, int line_no) {
  const std::string where = "manifest line " + std::to_string(line_no);
  for (const char* key : {"image", "template", "is_normal", "split", "boxes"}) {
    if (!j.contains(key)) throw std::runtime_error(where + ": missing field '" + key + "'");
  }
  SampleRecord r;
  r.image_path = j.at("image").get<std::string>();
  r.template_path = j.at("template").get<std::string>();
  r.is_normal = j.at("is_normal").get<bool>();
  r.split = j.at("split").get<std::string>();
  if (r.split != "train" && r.split != "test") {
    throw std::runtime_error(where + ": split must be 'train' or 'test', got '" + r.split + "'");
  }
  for (const auto& jb : j.at("boxes")) {
    if (!jb.is_array() || jb.size() != 5) {
      throw std::runtime_error(where + ": box entries must be [x1,y1,x2,y2,category]");
    }
    Box b{jb[0].get<float>(), jb[1].get<float>(), jb[2].get<float>(), jb[3].get<float>()};
    r.boxes.emplace_back(b, jb[4].get<int>());
  }
  return r;
}

void validate_manifest(const DatasetManifest& m) {
  const int c = static_cast<int>(m.categories.size());
  if (c == 0) throw std::runtime_error("manifest: empty category list");
  int line = 1;
  for (const auto& r : m.records) {
    ++line;
    const std::string where = "manifest line " + std::to_string(line);
    if (r.is_normal && !r.boxes.empty()) {
      throw std::runtime_error(where + ": is_normal sample carries " +
                               std::to_string(r.boxes.size()) + " boxes");
    }
    for (const auto& [b, cat] : r.boxes) {
      if (cat < 1 || cat > c) {
        throw std::runtime_error(where + ": category id " + std::to_string(cat) +
                                 " outside 1.." + std::to_string(c));
      }
      if (b.x2 <= b.x1 || b.y2 <= b.y1) {
        throw std::runtime_error(where + ": degenerate box");
      }
    }
    for (const std::string& rel : {r.image_path, r.template_path}) {
      if (rel.empty()) continue;
      const fs::path p = fs::path(m.root) / rel;
      if (!fs::exists(p)) throw std::runtime_error("manifest references missing file: " + p.string());
    }
  }
}

}  // namespace

void save_manifest(const DatasetManifest& m) {
  const fs::path path = fs::path(m.root) / "manifest";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  ordered_json head;
  head["version"] = m.version;
  head["categories"] = m.categories;
  head["seed"] = m.seed;
  head["config_hash"] = m.config_hash;
  head["pixel_mean"] = m.pixel_mean;
  head["pixel_std"] = m.pixel_std;
  f << head.dump() << "\n";
  for (const auto& r : m.records) f << record_to_json(r).dump() << "\n";
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

DatasetManifest load_manifest(const std::string& root) {
  const fs::path path = fs::path(root) / "manifest";
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty manifest: " + path.string());

  DatasetManifest m;
  m.root = root;
  ordered_json head;
  try {
    head = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw std::runtime_error("manifest header parse error: " + std::string(e.what()));
  }
  if (!head.contains("version")) throw std::runtime_error("manifest header missing 'version'");
  m.version = head.at("version").get<int>();
  if (m.version != 1) {
    throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
  }
  m.categories = head.at("categories").get<std::vector<std::string>>();
  m.seed = head.value("seed", std::uint64_t{0});
  m.config_hash = head.value("config_hash", std::string{});
  m.pixel_mean = head.value("pixel_mean", 127.0f);
  m.pixel_std = head.value("pixel_std", 50.0f);

  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               " parse error: " + std::string(e.what()));
    }
    m.records.push_back(record_from_json(j, line_no));
  }
  validate_manifest(m);
  return m;
}

LoadedSample load_sample(const DatasetManifest& m, const SampleRecord& r) {
  LoadedSample s;
  s.image = read_png((fs::path(m.root) / r.image_path).string());
  if (!r.template_path.empty()) {
    s.tmpl = read_png((fs::path(m.root) / r.template_path).string());
    if (s.tmpl.h != s.image.h || s.tmpl.w != s.image.w || s.tmpl.c != s.image.c) {
      throw std::runtime_error("template dimensions differ from image for " + r.image_path);
    }
  }
  s.is_normal = r.is_normal;
  s.boxes = r.boxes;
  return s;
}

void apply_pixel_shift(LoadedSample& s, int min_px, int max_px, Rng& rng) {
  if (min_px > max_px || min_px < 0) throw std::invalid_argument("pixel shift: bad magnitude range");
  auto draw = [&](int span) {
    int mag = rng.uniform_int(min_px, max_px);
    if (mag >= span) throw std::invalid_argument("pixel shift exceeds image size");
    return rng.bernoulli(0.5) ? mag : -mag;
  };
  const int dx = draw(s.image.w);
  const int dy = draw(s.image.h);
  s.image = shift_image(s.image, dx, dy);
  std::vector<std::pair<Box, int>> kept;
  for (auto [b, cat] : s.boxes) {
    b.x1 += dx;
    b.x2 += dx;
    b.y1 += dy;
    b.y2 += dy;
    b = clip_box(b, s.image.w, s.image.h);
    if (b.x2 > b.x1 && b.y2 > b.y1) kept.emplace_back(b, cat);
  }
  s.boxes = std::move(kept);
}

float resize_sample(LoadedSample& s, int min_target, int max_size) {
  const int short_edge = std::min(s.image.h, s.image.w);
  const int long_edge = std::max(s.image.h, s.image.w);
  double scale = static_cast<double>(min_target) / short_edge;
  if (long_edge * scale > max_size) scale = static_cast<double>(max_size) / long_edge;
  const int nh = static_cast<int>(s.image.h * scale + 1e-6);
  const int nw = static_cast<int>(s.image.w * scale + 1e-6);
  s.image = resize_image(s.image, nh, nw);
  if (!s.tmpl.empty()) s.tmpl = resize_image(s.tmpl, nh, nw);
  const float fs = static_cast<float>(scale);
  for (auto& [b, cat] : s.boxes) {
    b.x1 *= fs;
    b.y1 *= fs;
    b.x2 *= fs;
    b.y2 *= fs;
  }
  return fs;
}

int sample_train_size(const DataConfig& d, Rng& rng) {
  return rng.uniform_int(d.train_min_size_lo, d.train_min_size_hi);
}

// ---------------------------------------------------------------------------
// Synthetic generator.

namespace {

struct TexParams {
  std::string family;
  float angle = 0.0f;     // stripes orientation
  float period = 12.0f;   // stripes / checkers
  float phase = 0.0f;
  float lo = 60.0f;       // dark level
  float hi = 180.0f;      // bright level
  int cell = 8;           // noise lattice spacing
  std::uint64_t lattice_seed = 0;
  float slope = 0.0f;     // solid gradient per pixel
};

// Train and test draw the period/cell/level parameters from disjoint ranges
// so the test split presents textures the detector never trained on.
TexParams sample_texture(const GenConfig& cfg, const std::string& split, Rng& rng) {
  TexParams t;
  t.family = cfg.textures[rng.uniform_int(0, static_cast<int>(cfg.textures.size()) - 1)];
  const bool shifted = cfg.test_texture_shift && split == "test";
  t.angle = static_cast<float>(rng.uniform(0.0, 3.14159265));
  t.period = shifted ? static_cast<float>(rng.uniform(15.0, 22.0))
                     : static_cast<float>(rng.uniform(7.0, 13.0));
  t.phase = static_cast<float>(rng.uniform(0.0, t.period));
  t.lo = shifted ? static_cast<float>(rng.uniform(80.0, 105.0))
                 : static_cast<float>(rng.uniform(50.0, 75.0));
  t.hi = t.lo + (shifted ? static_cast<float>(rng.uniform(60.0, 90.0))
                         : static_cast<float>(rng.uniform(90.0, 130.0)));
  t.cell = shifted ? rng.uniform_int(12, 18) : rng.uniform_int(5, 9);
  t.lattice_seed = rng.next_u64();
  t.slope = shifted ? static_cast<float>(rng.uniform(0.15, 0.3))
                    : static_cast<float>(rng.uniform(-0.1, 0.1));
  return t;
}

float smoothstep(float u) { return u * u * (3.0f - 2.0f * u); }

// Value noise: random lattice, smoothstep-interpolated. The lattice is
// rebuilt from its own seed so image and template render identically.
Image render_texture(const TexParams& t, int size) {
  Image img(size, size, 1);
  if (t.family == "stripes" || t.family == "checkers") {
    const float ca = std::cos(t.angle), sa = std::sin(t.angle);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const float u = ca * x + sa * y + t.phase;
        bool on = std::fmod(std::fmod(u, 2.0f * t.period) + 2.0f * t.period, 2.0f * t.period) <
                  t.period;
        if (t.family == "checkers") {
          const float v = -sa * x + ca * y + t.phase;
          const bool on2 =
              std::fmod(std::fmod(v, 2.0f * t.period) + 2.0f * t.period, 2.0f * t.period) <
              t.period;
          on = on != on2;
        }
        img.at(0, y, x) = on ? t.hi : t.lo;
      }
    }
  } else if (t.family == "noise") {
    Rng lat(t.lattice_seed);
    const int cells = size / t.cell + 2;
    std::vector<float> lattice(static_cast<std::size_t>(cells) * cells);
    for (auto& v : lattice) v = static_cast<float>(lat.uniform());
    auto lv = [&](int cy, int cx) { return lattice[static_cast<std::size_t>(cy) * cells + cx]; };
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const float fy = static_cast<float>(y) / t.cell;
        const float fx = static_cast<float>(x) / t.cell;
        const int cy = static_cast<int>(fy), cx = static_cast<int>(fx);
        const float wy = smoothstep(fy - cy), wx = smoothstep(fx - cx);
        const float v = lv(cy, cx) * (1 - wy) * (1 - wx) + lv(cy, cx + 1) * (1 - wy) * wx +
                        lv(cy + 1, cx) * wy * (1 - wx) + lv(cy + 1, cx + 1) * wy * wx;
        img.at(0, y, x) = t.lo + v * (t.hi - t.lo);
      }
    }
  } else {  // solid
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        img.at(0, y, x) = 0.5f * (t.lo + t.hi) + t.slope * (x - size / 2);
      }
    }
  }
  return img;
}

struct DefectStamp {
  Box box;
  int category = 1;
};

constexpr int kScratch = 1, kBlob = 2, kStain = 3;

// Adds one defect to img, returns the tight box of pixels whose value moved by
// more than half the requested contrast. Contrast sign is chosen away from
// the clamp so the peak deviation survives quantization.
bool stamp_defect(Image& img, int category, float contrast,
                  const std::vector<DefectStamp>& placed, Rng& rng, DefectStamp* out) {
  const int size = img.w;
  const int margin = 3;
  for (int attempt = 0; attempt < 40; ++attempt) {
    const float cx = static_cast<float>(rng.uniform(margin + 4.0, size - margin - 5.0));
    const float cy = static_cast<float>(rng.uniform(margin + 4.0, size - margin - 5.0));
    // Log-uniform footprint area, mirroring the wide real-world size spread.
    const float max_side = size / 3.0f;
    const float area = std::exp(static_cast<float>(
        rng.uniform(std::log(30.0), std::log(static_cast<double>(max_side * max_side)))));

    const float base = img.at(0, static_cast<int>(cy), static_cast<int>(cx));
    float sign = rng.bernoulli(0.5) ? 1.0f : -1.0f;
    if (base + sign * contrast > 255.0f || base + sign * contrast < 0.0f) sign = -sign;

    // The box must bound every modified pixel: outside the annotation the
    // image is promised to equal the template exactly.
    std::vector<std::pair<int, int>> touched;
    auto mark = [&](int y, int x, float frac) {
      if (y < 0 || y >= size || x < 0 || x >= size || frac <= 0.0f) return;
      img.at(0, y, x) += sign * contrast * frac;
      touched.emplace_back(y, x);
    };

    Image backup = img;
    if (category == kScratch) {
      const float len = std::max(6.0f, std::min(area / 1.5f, size * 0.6f));
      const float ang = static_cast<float>(rng.uniform(0.0, 3.14159265));
      const float dx = std::cos(ang), dy = std::sin(ang);
      const int half = static_cast<int>(len / 2);
      for (int s = -half; s <= half; ++s) {
        mark(static_cast<int>(std::round(cy + dy * s)), static_cast<int>(std::round(cx + dx * s)),
             1.0f);
        mark(static_cast<int>(std::round(cy + dy * s + dx)),
             static_cast<int>(std::round(cx + dx * s - dy)), 0.7f);
      }
    } else if (category == kBlob) {
      const float ratio = static_cast<float>(rng.uniform(0.5, 2.0));
      const float a = std::max(2.5f, std::sqrt(area * ratio / 3.14159f));
      const float b = std::max(2.5f, a / ratio);
      for (int y = static_cast<int>(cy - b) - 1; y <= static_cast<int>(cy + b) + 1; ++y) {
        for (int x = static_cast<int>(cx - a) - 1; x <= static_cast<int>(cx + a) + 1; ++x) {
          const float u = (x - cx) / a, v = (y - cy) / b;
          const float r2 = u * u + v * v;
          if (r2 <= 1.0f) mark(y, x, r2 < 0.7f ? 1.0f : 0.75f);
        }
      }
    } else {  // stain: broad patch, soft falloff, lower peak contrast
      const float r = std::max(4.0f, std::sqrt(2.0f * area / 3.14159f));
      for (int y = static_cast<int>(cy - r) - 1; y <= static_cast<int>(cy + r) + 1; ++y) {
        for (int x = static_cast<int>(cx - r) - 1; x <= static_cast<int>(cx + r) + 1; ++x) {
          const float u = (x - cx) / r, v = (y - cy) / r;
          const float d = std::sqrt(u * u + v * v);
          if (d <= 1.0f) mark(y, x, 0.85f * smoothstep(1.0f - d) + 0.15f);
        }
      }
    }

    if (touched.empty()) {
      img = std::move(backup);
      continue;
    }
    int x1 = size, y1 = size, x2 = -1, y2 = -1;
    for (auto [y, x] : touched) {
      x1 = std::min(x1, x);
      y1 = std::min(y1, y);
      x2 = std::max(x2, x);
      y2 = std::max(y2, y);
    }
    Box b{static_cast<float>(x1), static_cast<float>(y1), static_cast<float>(x2 + 1),
          static_cast<float>(y2 + 1)};
    bool overlaps = false;
    for (const auto& p : placed) {
      if (iou(b, p.box) > 0.0f) overlaps = true;
    }
    if (overlaps || b.x2 - b.x1 < 3.0f || b.y2 - b.y1 < 3.0f) {
      img = std::move(backup);
      continue;
    }
    out->box = b;
    out->category = category;
    return true;
  }
  return false;
}

void add_noise_and_quantize(Image& img, float sigma, Rng& rng) {
  for (auto& v : img.pix) {
    if (sigma > 0.0f) v += static_cast<float>(rng.normal(0.0, sigma));
    v = std::round(std::min(255.0f, std::max(0.0f, v)));
  }
}

std::string sample_name(const std::string& split, int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d.png", split.c_str(), idx);
  return buf;
}

}  // namespace

DatasetManifest synth_generate(const GenConfig& cfg, const std::string& out_root) {
  cfg.validate();
  fs::create_directories(fs::path(out_root) / "images");
  fs::create_directories(fs::path(out_root) / "templates");

  DatasetManifest m;
  m.root = out_root;
  m.categories = {"scratch", "blob", "stain"};
  m.seed = cfg.seed;
  m.config_hash = cfg.hash();

  Rng rng(cfg.seed);
  double sum = 0.0, sumsq = 0.0;
  std::int64_t train_px = 0;

  for (const char* split_name : {"train", "test"}) {
    const std::string split = split_name;
    const int count = split == "train" ? cfg.count_train : cfg.count_test;
    for (int i = 0; i < count; ++i) {
      const TexParams tex = sample_texture(cfg, split, rng);
      Image tmpl = render_texture(tex, cfg.image_size);
      Image img = tmpl;  // identical texture; defects and noise differ

      SampleRecord rec;
      rec.split = split;
      rec.image_path = "images/" + sample_name(split, i);
      rec.template_path = "templates/" + sample_name(split, i);
      rec.is_normal = rng.bernoulli(cfg.normal_fraction);

      if (!rec.is_normal) {
        const int want = rng.uniform_int(1, cfg.max_defects);
        std::vector<DefectStamp> placed;
        for (int d = 0; d < want; ++d) {
          const int cat = rng.uniform_int(kScratch, kStain);
          const float contrast =
              static_cast<float>(rng.uniform(cfg.defect_contrast_lo, cfg.defect_contrast_hi));
          DefectStamp stamp;
          if (stamp_defect(img, cat, contrast, placed, rng, &stamp)) {
            placed.push_back(stamp);
          }
        }
        if (placed.empty()) rec.is_normal = true;  // every placement failed
        for (const auto& p : placed) rec.boxes.emplace_back(p.box, p.category);
      }

      add_noise_and_quantize(img, cfg.noise_sigma, rng);
      add_noise_and_quantize(tmpl, cfg.noise_sigma, rng);
      write_png((fs::path(out_root) / rec.image_path).string(), img);
      write_png((fs::path(out_root) / rec.template_path).string(), tmpl);

      if (split == "train") {
        for (float v : img.pix) {
          sum += v;
          sumsq += static_cast<double>(v) * v;
        }
        train_px += static_cast<std::int64_t>(img.pix.size());
      }
      m.records.push_back(std::move(rec));
    }
  }

  if (train_px > 0) {
    const double mean = sum / train_px;
    const double var = std::max(0.0, sumsq / train_px - mean * mean);
    m.pixel_mean = static_cast<float>(mean);
    m.pixel_std = static_cast<float>(std::max(1.0, std::sqrt(var)));
  }
  save_manifest(m);
  return m;
}

}  // namespace refdet
