#include "refdet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace refdet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw std::invalid_argument("write_png: 1 or 3 channels only");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: init failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: encode failure for " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ch = 0; ch < img.c; ++ch) {
        row[static_cast<std::size_t>(x) * img.c + ch] = to_u8(img.at(ch, y, x));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: init failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: decode failure for " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: unsupported channel count in " + path);
  }

  Image img(static_cast<int>(h), static_cast<int>(w), channels);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * channels);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int ch = 0; ch < channels; ++ch) {
        img.at(ch, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<float>(row[static_cast<std::size_t>(x) * channels + ch]);
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image resize_image(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_image: bad target size");
  Image out(out_h, out_w, img.c);
  double sy = static_cast<double>(img.h) / out_h;
  double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.h - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, img.h - 1);
    float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.w - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, img.w - 1);
      float wx = static_cast<float>(fx - x0);
      for (int ch = 0; ch < img.c; ++ch) {
        float top = img.at(ch, y0, x0) * (1 - wx) + img.at(ch, y0, x1) * wx;
        float bot = img.at(ch, y1, x0) * (1 - wx) + img.at(ch, y1, x1) * wx;
        out.at(ch, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

namespace {

// Reflect index into [0, n-1] without repeating the border pixel
// (..., 2, 1, 0 | 0', 1', 2', ...) -> mirror about -0.5 and n-0.5.
int reflect(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * n;
  int m = ((i % period) + period) % period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

Image shift_image(const Image& img, int dx, int dy) {
  if (std::abs(dx) >= img.w || std::abs(dy) >= img.h) {
    throw std::invalid_argument("shift_image: shift exceeds image size");
  }
  Image out(img.h, img.w, img.c);
  for (int ch = 0; ch < img.c; ++ch) {
    for (int y = 0; y < img.h; ++y) {
      int sy = reflect(y - dy, img.h);
      for (int x = 0; x < img.w; ++x) {
        int sx = reflect(x - dx, img.w);
        out.at(ch, y, x) = img.at(ch, sy, sx);
      }
    }
  }
  return out;
}

void draw_box(Image& img, const Box& b, const std::array<float, 3>& color, int thickness) {
  int x1 = std::clamp(static_cast<int>(std::lround(b.x1)), 0, img.w - 1);
  int y1 = std::clamp(static_cast<int>(std::lround(b.y1)), 0, img.h - 1);
  int x2 = std::clamp(static_cast<int>(std::lround(b.x2)) - 1, 0, img.w - 1);
  int y2 = std::clamp(static_cast<int>(std::lround(b.y2)) - 1, 0, img.h - 1);
  auto paint = [&](int y, int x) {
    for (int ch = 0; ch < img.c; ++ch) img.at(ch, y, x) = color[ch % 3];
  };
  for (int t = 0; t < thickness; ++t) {
    int yt = std::min(y1 + t, img.h - 1);
    int yb = std::max(y2 - t, 0);
    for (int x = x1; x <= x2; ++x) {
      paint(yt, x);
      paint(yb, x);
    }
    int xl = std::min(x1 + t, img.w - 1);
    int xr = std::max(x2 - t, 0);
    for (int y = y1; y <= y2; ++y) {
      paint(y, xl);
      paint(y, xr);
    }
  }
}

Image gray_to_rgb(const Image& img) {
  if (img.c == 3) return img;
  Image out(img.h, img.w, 3);
  for (int ch = 0; ch < 3; ++ch) {
    std::copy(img.pix.begin(), img.pix.end(), out.pix.begin() + static_cast<std::size_t>(ch) * img.h * img.w);
  }
  return out;
}

}  // namespace refdet
