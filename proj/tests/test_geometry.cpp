#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "refdet/geometry.hpp"
#include "refdet/rng.hpp"
#include "support/oracles.hpp"

using namespace refdet;

namespace {

Box make_cbox(float cx, float cy, float w, float h) {
  return Box{cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h};
}

// Pixel-counting IoU on an integer grid for integer-cornered boxes.
double iou_pixel_oracle(const Box& a, const Box& b) {
  auto covers = [](const Box& box, int px, int py) {
    return px >= box.x1 && px < box.x2 && py >= box.y1 && py < box.y2;
  };
  int inter = 0, uni = 0;
  for (int y = -8; y < 48; ++y) {
    for (int x = -8; x < 48; ++x) {
      bool ia = covers(a, x, y), ib = covers(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("iou known values") {
  Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0f));
  CHECK(iou(a, Box{20, 20, 30, 30}) == doctest::Approx(0.0f));
  // inter 50, union 150.
  Box b{5, 0, 15, 10};
  CHECK(iou(a, b) == doctest::Approx(1.0f / 3.0f));
  CHECK(iou(a, b) == doctest::Approx(iou_pixel_oracle(a, b)));
  // Degenerate boxes never divide by zero.
  Box z{3, 3, 3, 3};
  CHECK(iou(z, z) == doctest::Approx(0.0f));
}

TEST_CASE("iou symmetry and range on random boxes") {
  Rng rng(101);
  for (int i = 0; i < 200; ++i) {
    Box a{static_cast<float>(rng.uniform(0, 30)), static_cast<float>(rng.uniform(0, 30)), 0, 0};
    a.x2 = a.x1 + static_cast<float>(rng.uniform(1, 15));
    a.y2 = a.y1 + static_cast<float>(rng.uniform(1, 15));
    Box b{static_cast<float>(rng.uniform(0, 30)), static_cast<float>(rng.uniform(0, 30)), 0, 0};
    b.x2 = b.x1 + static_cast<float>(rng.uniform(1, 15));
    b.y2 = b.y1 + static_cast<float>(rng.uniform(1, 15));
    float ab = iou(a, b);
    CHECK(ab == doctest::Approx(iou(b, a)));
    CHECK(ab >= 0.0f);
    CHECK(ab <= 1.0f);
  }
}

TEST_CASE("nms known cases") {
  CHECK(nms({}, {}, 0.5f).empty());
  CHECK(nms({Box{0, 0, 5, 5}}, {0.3f}, 0.5f) == std::vector<int>{0});
  // Identical boxes: higher score survives.
  CHECK(nms({Box{0, 0, 10, 10}, Box{0, 0, 10, 10}}, {0.9f, 0.8f}, 0.5f) == std::vector<int>{0});
  // Disjoint boxes both survive regardless of score order.
  auto kept = nms({Box{0, 0, 10, 10}, Box{50, 50, 60, 60}}, {0.1f, 0.7f}, 0.5f);
  CHECK(kept == std::vector<int>{1, 0});
  // Score tie resolves to the lower index.
  auto tie = nms({Box{0, 0, 10, 10}, Box{1, 0, 11, 10}}, {0.5f, 0.5f}, 0.3f);
  CHECK(tie == std::vector<int>{0});
}

TEST_CASE("nms equals the exhaustive oracle on random instances") {
  Rng rng(202);
  for (int inst = 0; inst < 200; ++inst) {
    int n = rng.uniform_int(0, 10);
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (int i = 0; i < n; ++i) {
      float x = static_cast<float>(rng.uniform(0, 40));
      float y = static_cast<float>(rng.uniform(0, 40));
      boxes.push_back(Box{x, y, x + static_cast<float>(rng.uniform(2, 20)),
                          y + static_cast<float>(rng.uniform(2, 20))});
      // Quantized scores exercise tie handling.
      scores.push_back(static_cast<float>(rng.uniform_int(0, 9)) / 10.0f);
    }
    float thr = static_cast<float>(rng.uniform(0.1, 0.9));
    CHECK(nms(boxes, scores, thr) == testsupport::nms_reference(boxes, scores, thr));
  }
}

TEST_CASE("encode_deltas known values") {
  Box anchor = make_cbox(10, 10, 10, 10);
  BoxDeltas zero = encode_deltas(anchor, anchor);
  CHECK(zero.dx == doctest::Approx(0.0f));
  CHECK(zero.dy == doctest::Approx(0.0f));
  CHECK(zero.dw == doctest::Approx(0.0f));
  CHECK(zero.dh == doctest::Approx(0.0f));

  Box target = make_cbox(15, 10, 20, 10);
  BoxDeltas d = encode_deltas(anchor, target);
  CHECK(d.dx == doctest::Approx(0.5f));
  CHECK(d.dy == doctest::Approx(0.0f));
  CHECK(d.dw == doctest::Approx(std::log(2.0f)));
  CHECK(d.dh == doctest::Approx(0.0f));

  CHECK_THROWS(encode_deltas(anchor, Box{0, 0, 0, 10}));
  CHECK_THROWS(encode_deltas(Box{0, 0, 0, 0}, target));
}

TEST_CASE("encode/decode round-trip on random pairs") {
  Rng rng(303);
  for (int i = 0; i < 100; ++i) {
    Box anchor = make_cbox(static_cast<float>(rng.uniform(10, 100)),
                           static_cast<float>(rng.uniform(10, 100)),
                           static_cast<float>(rng.uniform(4, 60)),
                           static_cast<float>(rng.uniform(4, 60)));
    Box target = make_cbox(static_cast<float>(rng.uniform(10, 100)),
                           static_cast<float>(rng.uniform(10, 100)),
                           static_cast<float>(rng.uniform(4, 60)),
                           static_cast<float>(rng.uniform(4, 60)));
    Box rt = decode_deltas(anchor, encode_deltas(anchor, target));
    CHECK(rt.x1 == doctest::Approx(target.x1).epsilon(1e-5));
    CHECK(rt.y1 == doctest::Approx(target.y1).epsilon(1e-5));
    CHECK(rt.x2 == doctest::Approx(target.x2).epsilon(1e-5));
    CHECK(rt.y2 == doctest::Approx(target.y2).epsilon(1e-5));
  }
}

TEST_CASE("decode clamps exponent when asked") {
  Box anchor = make_cbox(10, 10, 10, 10);
  BoxDeltas wild{0, 0, 50.0f, 50.0f};
  Box capped = decode_deltas(anchor, wild, std::log(1000.0f / 16.0f));
  CHECK(capped.width() == doctest::Approx(10.0f * 1000.0f / 16.0f));
}

TEST_CASE("context_box formula and clipping") {
  // No clip: pure scale about the center.
  Box r = make_cbox(50, 50, 20, 10);
  Box c = context_box(r, 1.5f, 200, 200);
  CHECK(c.cx() == doctest::Approx(50.0f));
  CHECK(c.cy() == doctest::Approx(50.0f));
  CHECK(c.width() == doctest::Approx(30.0f));
  CHECK(c.height() == doctest::Approx(15.0f));

  // Near the border the expanded corners clip: x in [-10, 20] -> [0, 20].
  Box left = make_cbox(5, 50, 20, 10);
  Box lc = context_box(left, 1.5f, 100, 100);
  CHECK(lc.x1 == doctest::Approx(0.0f));
  CHECK(lc.x2 == doctest::Approx(20.0f));
  CHECK(lc.y1 == doctest::Approx(42.5f));
  CHECK(lc.y2 == doctest::Approx(57.5f));

  // Continuity at k -> 1.
  Box near = context_box(r, 1.0f + 1e-4f, 200, 200);
  CHECK(near.width() == doctest::Approx(r.width()).epsilon(1e-3));
  CHECK(near.height() == doctest::Approx(r.height()).epsilon(1e-3));

  CHECK_THROWS(context_box(r, 1.0f, 200, 200));
}

TEST_CASE("context_box area bound property") {
  Rng rng(404);
  for (int i = 0; i < 200; ++i) {
    Box r = make_cbox(static_cast<float>(rng.uniform(5, 95)),
                      static_cast<float>(rng.uniform(5, 95)),
                      static_cast<float>(rng.uniform(2, 50)),
                      static_cast<float>(rng.uniform(2, 50)));
    Box c = context_box(r, 1.5f, 100, 100);
    CHECK(c.area() <= doctest::Approx(2.25f * r.area()).epsilon(1e-4));
    bool clipped = c.x1 <= 0.0f || c.y1 <= 0.0f || c.x2 >= 100.0f || c.y2 >= 100.0f;
    if (!clipped) CHECK(c.area() == doctest::Approx(2.25f * r.area()).epsilon(1e-4));
  }
}

TEST_CASE("map_level known values and monotonicity") {
  CHECK(map_level(56, 56) == 2);   // log2(1) = 0 clamps up
  CHECK(map_level(448, 448) == 3); // log2(8) = 3
  CHECK(map_level(3584, 3584) == 5);  // log2(64) = 6 clamps down
  CHECK(map_level(1, 1) == 2);
  CHECK_THROWS(map_level(0, 10));
  CHECK_THROWS(map_level(10, -1));

  int prev = 2;
  for (float s = 4; s < 4000; s *= 1.3f) {
    int lvl = map_level(s, s);
    CHECK(lvl >= prev);
    prev = lvl;
  }
}

TEST_CASE("anchor generation formula") {
  auto single = generate_anchors(1, 1, 8, 32.0f, {1.0f});
  REQUIRE(single.size() == 1);
  CHECK(single[0].cx() == doctest::Approx(4.0f));
  CHECK(single[0].cy() == doctest::Approx(4.0f));
  CHECK(single[0].width() == doctest::Approx(32.0f));
  CHECK(single[0].height() == doctest::Approx(32.0f));

  auto grid = generate_anchors(5, 7, 16, 64.0f, {0.5f, 1.0f, 2.0f});
  CHECK(grid.size() == 5u * 7u * 3u);
  for (const Box& b : grid) {
    CHECK(b.width() * b.height() == doctest::Approx(64.0f * 64.0f).epsilon(1e-4));
  }
  // Ratio 1:2 at size 32 preserves area.
  auto wide = generate_anchors(1, 1, 8, 32.0f, {0.5f});
  CHECK(wide[0].width() * wide[0].height() == doctest::Approx(32.0f * 32.0f).epsilon(1e-4));
  CHECK(wide[0].height() / wide[0].width() == doctest::Approx(0.5f).epsilon(1e-4));
}

TEST_CASE("anchor grids are translation equivariant") {
  auto g = generate_anchors(4, 4, 16, 64.0f, {1.0f});
  // Cell (i, j+1) equals cell (i, j) shifted by one stride in x.
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j + 1 < 4; ++j) {
      const Box& a = g[(i * 4 + j)];
      const Box& b = g[(i * 4 + j + 1)];
      CHECK(b.x1 - a.x1 == doctest::Approx(16.0f));
      CHECK(b.y1 == doctest::Approx(a.y1));
    }
  }
}

TEST_CASE("anchor grid per-level sizes and validation") {
  std::vector<std::array<int, 2>> shapes{{8, 8}, {4, 4}, {2, 2}, {1, 1}};
  std::vector<int> strides{4, 8, 16, 32};
  std::vector<float> sizes{32, 64, 128, 256};
  AnchorGrid grid = generate_anchor_grid(shapes, strides, sizes, {0.5f, 1.0f, 2.0f});
  REQUIRE(grid.levels.size() == 4);
  CHECK(grid.levels[0].size() == 8u * 8u * 3u);
  CHECK(grid.levels[3].size() == 3u);
  CHECK(grid.levels[3][1].width() == doctest::Approx(256.0f));

  CHECK_THROWS(generate_anchor_grid(shapes, {4, 8}, sizes, {1.0f}));
}

TEST_CASE("clip_box stays inside the image") {
  Box b{-5, -3, 120, 80};
  Box c = clip_box(b, 100, 60);
  CHECK(c.x1 == 0.0f);
  CHECK(c.y1 == 0.0f);
  CHECK(c.x2 == 100.0f);
  CHECK(c.y2 == 60.0f);
}
