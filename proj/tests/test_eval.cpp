#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "refdet/eval.hpp"
#include "refdet/rng.hpp"
#include "support/oracles.hpp"

using namespace refdet;
using testsupport::ap_reference;

namespace {

Detection det(int image, float x1, float y1, float x2, float y2, int cat, float score) {
  return Detection{image, Box{x1, y1, x2, y2}, cat, score};
}

GtBox gt(int image, float x1, float y1, float x2, float y2, int cat) {
  return GtBox{image, Box{x1, y1, x2, y2}, cat};
}

}  // namespace

TEST_CASE("postprocess filters, suppresses, and caps") {
  EvalConfig ec;  // score 0.01, nms 0.5, max 100

  SUBCASE("everything below the score threshold vanishes") {
    const std::vector<float> probs{0.995f, 0.005f, 0.996f, 0.004f};
    const std::vector<std::array<float, 4>> boxes{{0, 0, 10, 10}, {20, 20, 30, 30}};
    CHECK(postprocess(probs, 2, 1, boxes, ec).empty());
  }

  SUBCASE("size mismatches are rejected") {
    CHECK_THROWS_AS(postprocess({0.5f, 0.5f}, 2, 1, {{0, 0, 1, 1}}, ec), std::invalid_argument);
    CHECK_THROWS_AS(postprocess({0.5f, 0.5f, 0.5f}, 1, 2, {{0, 0, 1, 1}}, ec),
                    std::invalid_argument);
  }

  SUBCASE("same-class overlap keeps only the higher score") {
    // IoU of the two boxes is 100/160 = 0.625, above the 0.5 threshold.
    const std::vector<float> probs{0.1f, 0.9f, 0.2f, 0.8f};
    const std::vector<std::array<float, 4>> boxes{{0, 0, 10, 10}, {0, 0, 10, 16}};
    const auto out = postprocess(probs, 2, 1, boxes, ec);
    REQUIRE(out.size() == 1);
    CHECK(out[0].score == 0.9f);
    CHECK(out[0].box.y2 == 10.0f);
  }

  SUBCASE("suppression never crosses class boundaries") {
    // Same two boxes, but the strong scores sit in different classes.
    const std::vector<float> probs{0.1f, 0.9f, 0.001f, 0.2f, 0.001f, 0.8f};
    const std::vector<std::array<float, 4>> boxes{
        {0, 0, 10, 10}, {99, 99, 100, 100}, {99, 99, 100, 100}, {0, 0, 10, 16}};
    const auto out = postprocess(probs, 2, 2, boxes, ec);
    REQUIRE(out.size() == 2);
    CHECK(out[0].category == 1);
    CHECK(out[1].category == 2);
    CHECK(out[0].score == 0.9f);
    CHECK(out[1].score == 0.8f);
  }

  SUBCASE("each class reads its own regressed box") {
    const std::vector<float> probs{0.1f, 0.6f, 0.3f};
    const std::vector<std::array<float, 4>> boxes{{0, 0, 10, 10}, {50, 50, 60, 60}};
    const auto out = postprocess(probs, 1, 2, boxes, ec);
    REQUIRE(out.size() == 2);
    CHECK(out[0].category == 1);
    CHECK(out[0].box.x1 == 0.0f);
    CHECK(out[1].category == 2);
    CHECK(out[1].box.x1 == 50.0f);
  }

  SUBCASE("detection cap keeps the best hundred") {
    std::vector<float> probs;
    std::vector<std::array<float, 4>> boxes;
    for (int i = 0; i < 150; ++i) {
      const float s = 0.99f - 0.001f * i;
      probs.push_back(1.0f - s);
      probs.push_back(s);
      const float x = static_cast<float>(i * 20);
      boxes.push_back({x, 0, x + 8, 8});
    }
    const auto out = postprocess(probs, 150, 1, boxes, ec);
    REQUIRE(static_cast<int>(out.size()) == ec.max_dets);
    for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].score >= out[i].score);
    CHECK(out.back().score == doctest::Approx(0.99f - 0.001f * 99).epsilon(1e-6));
  }
}

TEST_CASE("average precision on hand-checked scenes") {
  SUBCASE("perfect detector scores 1.0") {
    const std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1), gt(0, 20, 20, 30, 30, 1),
                               gt(1, 5, 5, 15, 15, 1)};
    const std::vector<Detection> d{det(0, 0, 0, 10, 10, 1, 0.9f),
                                   det(0, 20, 20, 30, 30, 1, 0.8f),
                                   det(1, 5, 5, 15, 15, 1, 0.7f)};
    CHECK(average_precision(d, g, 0.5f, false) == doctest::Approx(1.0));
    CHECK(average_precision(d, g, 0.5f, true) == doctest::Approx(1.0));
  }

  SUBCASE("no detections scores 0") {
    CHECK(average_precision({}, {gt(0, 0, 0, 10, 10, 1)}, 0.5f, false) == 0.0);
  }

  SUBCASE("no ground truth is undefined") {
    CHECK(std::isnan(average_precision({det(0, 0, 0, 10, 10, 1, 0.9f)}, {}, 0.5f, false)));
  }

  SUBCASE("one hit one miss out of two boxes") {
    const std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1), gt(0, 40, 40, 50, 50, 1)};
    const std::vector<Detection> d{det(0, 0, 0, 10, 10, 1, 0.9f),
                                   det(0, 70, 70, 80, 80, 1, 0.8f)};
    // PR points: (r=0.5, p=1.0) then (r=0.5, p=0.5).
    CHECK(average_precision(d, g, 0.5f, false) == doctest::Approx(0.5));
    CHECK(average_precision(d, g, 0.5f, true) == doctest::Approx(6.0 / 11.0));
  }

  SUBCASE("second detection on a matched box is a false positive") {
    const std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1)};
    const std::vector<Detection> d{det(0, 0, 0, 10, 10, 1, 0.9f),
                                   det(0, 0.5f, 0, 10.5f, 10, 1, 0.8f)};
    // The duplicate arrives after recall already hit 1.0, so AP stays 1.0.
    CHECK(average_precision(d, g, 0.5f, false) == doctest::Approx(1.0));
    // Rank order decides who owns the box: when the shifted duplicate
    // outscores the exact hit it claims the match and the exact box is the
    // false positive, trailing full recall just the same.
    const std::vector<Detection> d2{det(0, 0, 0, 10, 10, 1, 0.7f),
                                    det(0, 0.5f, 0, 10.5f, 10, 1, 0.8f)};
    CHECK(average_precision(d2, g, 0.5f, false) == doctest::Approx(1.0));
    // A low-overlap early detection does cost AP: it spends precision before
    // any recall exists.
    const std::vector<Detection> d3{det(0, 40, 40, 50, 50, 1, 0.9f),
                                    det(0, 0, 0, 10, 10, 1, 0.8f)};
    CHECK(average_precision(d3, g, 0.5f, false) == doctest::Approx(0.5));
  }

  SUBCASE("greedy match takes the highest-overlap free box") {
    const std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1), gt(0, 2, 0, 12, 10, 1)};
    const std::vector<Detection> d{det(0, 0, 0, 10.5f, 10, 1, 0.9f),
                                   det(0, 2, 0, 12, 10, 1, 0.8f),
                                   det(0, 0, 0, 10, 10, 1, 0.7f)};
    // First takes the left box (0.952 beats 0.708), second takes the right
    // one exactly, third finds nothing free. Full recall before the miss.
    CHECK(average_precision(d, g, 0.5f, false) == doctest::Approx(1.0));
  }

  SUBCASE("score ties resolve by input position") {
    const std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1)};
    const std::vector<Detection> d{det(0, 100, 100, 110, 110, 1, 0.5f),
                                   det(0, 0, 0, 10, 10, 1, 0.5f)};
    CHECK(average_precision(d, g, 0.5f, false) == doctest::Approx(0.5));
  }

  SUBCASE("detections never match boxes from other images") {
    const std::vector<GtBox> g{gt(1, 0, 0, 10, 10, 1)};
    const std::vector<Detection> d{det(0, 0, 0, 10, 10, 1, 0.9f)};
    CHECK(average_precision(d, g, 0.5f, false) == 0.0);
  }

  SUBCASE("input order does not matter for distinct scores") {
    std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1), gt(0, 30, 0, 44, 12, 1)};
    std::vector<Detection> d{det(0, 1, 0, 11, 10, 1, 0.6f), det(0, 31, 0, 44, 12, 1, 0.9f),
                             det(0, 70, 70, 90, 90, 1, 0.3f)};
    const double ap = average_precision(d, g, 0.5f, false);
    std::reverse(d.begin(), d.end());
    CHECK(average_precision(d, g, 0.5f, false) == doctest::Approx(ap).epsilon(1e-12));
  }
}

TEST_CASE("average precision agrees with the rank-sum oracle on random scenes") {
  Rng rng(2024);
  for (int scene = 0; scene < 40; ++scene) {
    std::vector<GtBox> gts;
    std::vector<Detection> dets;
    const int ng = rng.uniform_int(1, 5);
    const int nd = rng.uniform_int(0, 8);
    for (int i = 0; i < ng; ++i) {
      const float x = static_cast<float>(rng.uniform_int(0, 40));
      const float y = static_cast<float>(rng.uniform_int(0, 40));
      const float w = static_cast<float>(rng.uniform_int(4, 14));
      const float h = static_cast<float>(rng.uniform_int(4, 14));
      gts.push_back(gt(rng.uniform_int(0, 1), x, y, x + w, y + h, 1));
    }
    for (int i = 0; i < nd; ++i) {
      const float x = static_cast<float>(rng.uniform_int(0, 44));
      const float y = static_cast<float>(rng.uniform_int(0, 44));
      const float w = static_cast<float>(rng.uniform_int(4, 14));
      const float h = static_cast<float>(rng.uniform_int(4, 14));
      // Coarse score grid on purpose: ties must follow the stable order.
      const float s = 0.1f * rng.uniform_int(1, 9);
      dets.push_back(det(rng.uniform_int(0, 1), x, y, x + w, y + h, 1, s));
    }
    for (bool eleven : {false, true}) {
      const double got = average_precision(dets, gts, 0.5f, eleven);
      const double want = ap_reference(dets, gts, 0.5f, eleven);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
      CHECK(got >= 0.0);
      CHECK(got <= 1.0);
    }
  }
}

TEST_CASE("mean AP skips categories without ground truth") {
  const std::vector<std::string> cats{"scratch", "blob", "stain"};
  const std::vector<GtBox> g{gt(0, 0, 0, 10, 10, 1), gt(0, 30, 30, 40, 40, 2)};
  const std::vector<Detection> d{det(0, 0, 0, 10, 10, 1, 0.9f),
                                 det(0, 30, 30, 40, 40, 2, 0.8f),
                                 det(0, 60, 60, 70, 70, 3, 0.7f)};
  const EvalReport rep = map50(d, g, cats);
  REQUIRE(rep.per_category_ap.size() == 3);
  CHECK(rep.per_category_ap[0] == doctest::Approx(1.0));
  CHECK(rep.per_category_ap[1] == doctest::Approx(1.0));
  CHECK(std::isnan(rep.per_category_ap[2]));
  CHECK(rep.per_category_gt == std::vector<int>{1, 1, 0});
  CHECK(rep.map == doctest::Approx(1.0));
  CHECK(rep.num_detections == 3);
  CHECK(rep.num_images == 1);

  CHECK(rep.pretty().find("mAP@0.5") != std::string::npos);
  CHECK(rep.pretty().find("--") != std::string::npos);
  CHECK(rep.to_json().find("\"ap50\": null") != std::string::npos);
}

TEST_CASE("mean AP rejects a dataset with no ground truth") {
  CHECK_THROWS_AS(map50({det(0, 0, 0, 10, 10, 1, 0.9f)}, {}, {"scratch"}),
                  std::invalid_argument);
}

TEST_CASE("image count spans detections and ground truth") {
  const std::vector<std::string> cats{"scratch"};
  const std::vector<GtBox> g{gt(3, 0, 0, 10, 10, 1), gt(7, 0, 0, 10, 10, 1)};
  const std::vector<Detection> d{det(5, 0, 0, 10, 10, 1, 0.9f)};
  CHECK(map50(d, g, cats).num_images == 3);
}

TEST_CASE("detections round trip through jsonl") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "refdet_dets.jsonl";
  const std::vector<Detection> d{det(0, 1.5f, 2.25f, 10, 12, 1, 0.875f),
                                 det(3, 0, 0, 5.5f, 4, 2, 0.5f)};
  save_detections(path.string(), d);
  const auto l = load_detections(path.string());
  REQUIRE(l.size() == 2);
  CHECK(l[0].image_id == 0);
  CHECK(l[0].box.y1 == 2.25f);
  CHECK(l[0].score == 0.875f);
  CHECK(l[1].image_id == 3);
  CHECK(l[1].category == 2);
  CHECK(l[1].box.x2 == 5.5f);
  fs::remove(path);
  CHECK_THROWS_AS(load_detections(path.string()), std::runtime_error);
}
