#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "refdet/geometry.hpp"

namespace refdet {

// Planar float image, values on the 0..255 scale. Channel count is 1 for
// dataset images and 3 for rendered overlays.
struct Image {
  int h = 0;
  int w = 0;
  int c = 1;
  std::vector<float> pix;  // [c][h][w]

  Image() = default;
  Image(int h_, int w_, int c_ = 1, float fill = 0.0f)
      : h(h_), w(w_), c(c_), pix(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  float& at(int ch, int y, int x) {
    return pix[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  float at(int ch, int y, int x) const {
    return pix[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  bool empty() const { return pix.empty(); }
};

// 8-bit PNG round trip; grayscale for c == 1, RGB for c == 3.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Bilinear resampling with half-pixel centers (align_corners off).
Image resize_image(const Image& img, int out_h, int out_w);

// Integer translation with reflected borders; (dx, dy) moves content right/down.
Image shift_image(const Image& img, int dx, int dy);

// In-place rectangle outline; color is per-channel (size must equal img.c).
void draw_box(Image& img, const Box& b, const std::array<float, 3>& color, int thickness = 1);

Image gray_to_rgb(const Image& img);

}  // namespace refdet
