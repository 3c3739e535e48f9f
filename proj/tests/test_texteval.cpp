#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "lowlight/error.hpp"
#include "lowlight/texteval.hpp"

using namespace lowlight;

TEST(RegionScore, StubShapesAndValues) {
  const LumaPoolProvider stub;
  EXPECT_EQ(region_score(Image::chw(3, 64, 64, 0.5f), stub).values.height(), 32);
  for (float v : testutil::vals(region_score(Image::chw(3, 8, 8, 1.0f), stub).values)) EXPECT_NEAR(v, 1.0f, 1e-6);

  // Left half black, right half white, split inside the second 2×2 column.
  Image img = Image::chw(3, 4, 6);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 3; x < 6; ++x) img.at(c, y, x) = 1.0f;
  const auto m = region_score(img, stub).values;
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(m.at(0, i, 0), 0.0f, 1e-6);
    EXPECT_NEAR(m.at(0, i, 1), 0.5f, 1e-6);
    EXPECT_NEAR(m.at(0, i, 2), 1.0f, 1e-6);
  }
  EXPECT_THROW(region_score(Image::chw(3, 5, 6), stub), ShapeError);
}

TEST(RegionScore, NetworkIsDeterministicBoundedAndFrozen) {
  const RegionNet net(RegionNetConfig{}, 5);
  const Image img = testutil::random_image(3, 16, 16, 1);
  const auto a = region_score(img, net).values;
  EXPECT_EQ(a, region_score(img, net).values);
  EXPECT_EQ(a.height(), 8);
  EXPECT_GE(a.min(), 0.0f);
  EXPECT_LE(a.max(), 1.0f);
  EXPECT_FALSE(net.params().trainable());
  EXPECT_EQ(net.kind(), "region-net/random");
}

TEST(RegionScore, NetworkSaveLoadRoundTrip) {
  const auto dir = testutil::scratch_dir("regionnet");
  const RegionNet net(RegionNetConfig{}, 5);
  net.save(dir / "r.llar");
  const RegionNet back = RegionNet::load(dir / "r.llar");
  EXPECT_EQ(back.kind(), "region-net/file");
  const Image img = testutil::random_image(3, 16, 16, 2);
  EXPECT_EQ(region_score(img, back).values, region_score(img, net).values);
}

TEST(SynthTarget, EmptyPeakAndCompositing) {
  for (float v : testutil::vals(synth_region_target({}, 32, 32).values)) EXPECT_EQ(v, 0.0f);

  // Box whose center (9,9) is the sample point of half-res pixel (4,4).
  const auto one = synth_region_target({TextBox::rect(4, 4, 14, 14, "a")}, 32, 32).values;
  const auto it = std::max_element(one.values().begin(), one.values().end());
  EXPECT_EQ(std::distance(one.values().begin(), it), 4 * 16 + 4);
  EXPECT_NEAR(*it, 1.0f, 1e-6);
  EXPECT_EQ(std::count(one.values().begin(), one.values().end(), *it), 1);

  const TextBox b1 = TextBox::rect(0, 0, 10, 8, "x"), b2 = TextBox::rect(16, 14, 30, 30, "y");
  const auto m1 = synth_region_target({b1}, 32, 32).values, m2 = synth_region_target({b2}, 32, 32).values;
  const auto both = synth_region_target({b1, b2}, 32, 32).values;
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_EQ(both[i], std::max(m1[i], m2[i]));

  const auto dont_care = synth_region_target({TextBox::rect(0, 0, 10, 8, "###", false)}, 32, 32).values;
  EXPECT_EQ(dont_care.max(), 0.0f);
}

TEST(SynthTarget, MonotoneUnderBoxAddition) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 40);
  std::vector<TextBox> boxes;
  Tensor prev = synth_region_target(boxes, 48, 48).values;
  for (int i = 0; i < 6; ++i) {
    const double x = u(rng), y = u(rng);
    boxes.push_back(TextBox::rect(x, y, x + 2 + u(rng) / 5, y + 2 + u(rng) / 5, "w"));
    const Tensor next = synth_region_target(boxes, 48, 48).values;
    for (std::size_t k = 0; k < next.size(); ++k) EXPECT_GE(next[k], prev[k]);
    prev = next;
  }
}

TEST(ExtractBoxes, FindsSeparatedBlobs) {
  const std::vector<TextBox> truth{TextBox::rect(4, 4, 20, 12), TextBox::rect(30, 30, 60, 44)};
  const auto boxes = extract_boxes(synth_region_target(truth, 64, 64));
  ASSERT_EQ(boxes.size(), 2u);
  for (const auto& t : truth) {
    double best = 0.0;
    for (const auto& b : boxes) best = std::max(best, iou(b, t));
    EXPECT_GT(best, 0.3);
  }
  EXPECT_TRUE(extract_boxes(synth_region_target({}, 64, 64)).empty());
}

TEST(Iou, HandComputed) {
  const auto a = TextBox::rect(0, 0, 10, 10), b = TextBox::rect(5, 0, 15, 10);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, TextBox::rect(20, 20, 30, 30)), 0.0);
  EXPECT_EQ(iou(a, b), 50.0 / 150.0);
  EXPECT_EQ(iou(b, a), iou(a, b));
  EXPECT_EQ(intersection_area(a, b), 50.0);
  // Diamond inside a square: intersection 50, union 100.
  TextBox diamond;
  diamond.quad = {Point{5, 0}, Point{10, 5}, Point{5, 10}, Point{0, 5}};
  EXPECT_DOUBLE_EQ(iou(a, diamond), 0.5);
  TextBox flat = TextBox::rect(0, 0, 10, 0);
  EXPECT_EQ(iou(a, flat), 0.0);
}

TEST(Matching, GreedyPrefersHigherIou) {
  const std::vector<TextBox> gt{TextBox::rect(0, 0, 10, 10)};
  const std::vector<TextBox> pred{TextBox::rect(0, 0, 10, 6), TextBox::rect(0, 0, 10, 8)};
  const auto m = match_detections(pred, gt);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].pred, 1);
  EXPECT_NEAR(m.pairs[0].iou, 0.8, 1e-12);
  EXPECT_EQ(m.unmatched_pred, std::vector<int>{0});
}

TEST(Matching, EmptyAndIdentical) {
  const std::vector<TextBox> gt{TextBox::rect(0, 0, 10, 10), TextBox::rect(20, 0, 30, 10)};
  const auto none = match_detections({}, gt);
  EXPECT_TRUE(none.pairs.empty());
  EXPECT_EQ(none.unmatched_gt.size(), 2u);
  const auto all = match_detections(gt, gt);
  EXPECT_EQ(all.pairs.size(), 2u);
  const auto h = h_mean(all, all.care_ground_truths(), all.counted_predictions());
  EXPECT_EQ(h.precision, 1.0);
  EXPECT_EQ(h.recall, 1.0);
  EXPECT_EQ(h.hmean, 1.0);
}

TEST(Matching, DontCareAbsorbsOverlaps) {
  const std::vector<TextBox> gt{TextBox::rect(0, 0, 10, 10, "A"), TextBox::rect(50, 50, 60, 60, "###", false)};
  const std::vector<TextBox> pred{TextBox::rect(0, 0, 10, 10), TextBox::rect(52, 52, 58, 58),
                                  TextBox::rect(80, 80, 90, 90)};
  const auto m = match_detections(pred, gt);
  EXPECT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.ignored_pred, std::vector<int>{1});
  EXPECT_EQ(m.unmatched_pred, std::vector<int>{2});
  EXPECT_EQ(m.care_ground_truths(), 1);
  EXPECT_EQ(m.counted_predictions(), 2);
}

TEST(Matching, PermutationInvariantProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 80);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TextBox> gt, pred;
    for (int i = 0; i < 5; ++i) {
      const double x = u(rng), y = u(rng);
      gt.push_back(TextBox::rect(x, y, x + 10, y + 6));
      pred.push_back(TextBox::rect(x + u(rng) / 20, y + u(rng) / 40, x + 10 + u(rng) / 20, y + 6));
    }
    pred.push_back(TextBox::rect(u(rng), u(rng), 95, 95));
    const auto m = match_detections(pred, gt);
    std::set<int> ps, gs;
    for (const auto& p : m.pairs) {
      EXPECT_GE(p.iou, 0.5);
      EXPECT_TRUE(ps.insert(p.pred).second);
      EXPECT_TRUE(gs.insert(p.gt).second);
    }
    auto rpred = pred;
    std::reverse(rpred.begin(), rpred.end());
    EXPECT_EQ(match_detections(rpred, gt).pairs.size(), m.pairs.size());
  }
}

TEST(HMeanTest, CountsAndConventions) {
  const auto h = h_mean(3, 6, 4);
  EXPECT_EQ(h.precision, 0.75);
  EXPECT_EQ(h.recall, 0.5);
  EXPECT_EQ(h.hmean, 0.6);
  const auto z = h_mean(0, 5, 0);
  EXPECT_EQ(z.precision, 0.0);
  EXPECT_EQ(z.recall, 0.0);
  EXPECT_EQ(z.hmean, 0.0);
}

TEST(HMeanTest, MatchesHarmonicMeanOnRandomCounts) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const int care = 1 + static_cast<int>(rng() % 20), counted = 1 + static_cast<int>(rng() % 20);
    const int matches = static_cast<int>(rng() % (std::min(care, counted) + 1));
    const auto h = h_mean(matches, care, counted);
    const double p = static_cast<double>(matches) / counted, r = static_cast<double>(matches) / care;
    EXPECT_DOUBLE_EQ(h.hmean, p + r == 0 ? 0.0 : 2 * p * r / (p + r));
    EXPECT_LE(h.hmean, std::max(p, r) + 1e-15);
  }
}

TEST(Spotting, CaseInsensitiveWordAccuracy) {
  EXPECT_TRUE(words_match("Better", "BETTER"));
  EXPECT_FALSE(words_match("bitter", "BETTER"));

  const Image img = testutil::random_image(3, 40, 40, 3);
  const std::vector<TextBox> gt{TextBox::rect(0, 0, 10, 10, "BETTER"), TextBox::rect(20, 20, 30, 30, "Exit")};
  const std::vector<TextBox> pred{TextBox::rect(0, 0, 10, 10), TextBox::rect(20, 20, 30, 30)};
  const auto m = match_detections(pred, gt);
  int calls = 0;
  const Recognizer rec = [&](const Image& crop) {
    EXPECT_EQ(crop.width(), 10);
    return ++calls == 1 ? std::string("Better") : std::string("bitter");
  };
  EXPECT_DOUBLE_EQ(spotting_accuracy(img, pred, gt, m, rec), 0.5);

  const Recognizer exact = [&, i = 0](const Image&) mutable { return gt[static_cast<std::size_t>(i++)].transcription; };
  EXPECT_DOUBLE_EQ(spotting_accuracy(img, pred, gt, m, exact), 1.0);

  const Recognizer broken = [](const Image&) -> std::string { throw std::runtime_error("ocr crashed"); };
  EXPECT_DOUBLE_EQ(spotting_accuracy(img, pred, gt, m, broken), 0.0);
}

TEST(Spotting, CommandRecognizer) {
  const Image img = testutil::random_image(3, 20, 20, 4);
  const std::vector<TextBox> gt{TextBox::rect(0, 0, 10, 10, "hello")};
  const auto m = match_detections(gt, gt);
  EXPECT_DOUBLE_EQ(spotting_accuracy(img, gt, gt, m, make_command_recognizer("echo HELLO; true")), 1.0);
  EXPECT_DOUBLE_EQ(spotting_accuracy(img, gt, gt, m, make_command_recognizer("false")), 0.0);
}

TEST(Detections, SubmissionRoundTrip) {
  const auto dir = testutil::scratch_dir("det");
  const std::vector<TextBox> boxes{TextBox::rect(1, 2, 30, 12), TextBox::rect(5, 5, 9, 9)};
  write_detections(boxes, dir / "res_a.txt");
  const auto back = parse_detections(dir / "res_a.txt", 100, 100);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].quad, boxes[0].quad);
  EXPECT_TRUE(back[1].care);
}
