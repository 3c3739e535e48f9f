#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include <fstream>

#include "helpers.hpp"
#include "lowlight/attention.hpp"
#include "lowlight/domain.hpp"
#include "lowlight/error.hpp"

using namespace lowlight;

TEST(LoadImage, EightBitScaling) {
  const auto dir = testutil::scratch_dir("load8");
  cv::Mat m(1, 1, CV_8UC3, cv::Scalar(128, 0, 255));  // BGR order on disk
  cv::imwrite((dir / "p.png").string(), m);
  const Image img = load_image(dir / "p.png");
  EXPECT_FLOAT_EQ(img.at(0, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(img.at(1, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(img.at(2, 0, 0), 128.0f / 255.0f);
}

TEST(LoadImage, SixteenBitAndBlack) {
  const auto dir = testutil::scratch_dir("load16");
  cv::imwrite((dir / "w.png").string(), cv::Mat(2, 2, CV_16UC3, cv::Scalar(65535, 65535, 65535)));
  cv::imwrite((dir / "b.png").string(), cv::Mat(2, 3, CV_8UC3, cv::Scalar(0, 0, 0)));
  for (float v : testutil::vals(load_image(dir / "w.png"))) EXPECT_EQ(v, 1.0f);
  const Image black = load_image(dir / "b.png");
  EXPECT_EQ(black.width(), 3);
  for (float v : black.values()) EXPECT_EQ(v, 0.0f);
}

TEST(LoadImage, Errors) {
  const auto dir = testutil::scratch_dir("loaderr");
  EXPECT_THROW(load_image(dir / "missing.png"), IoError);
  cv::imwrite((dir / "g.png").string(), cv::Mat(2, 2, CV_8UC1, cv::Scalar(7)));
  EXPECT_THROW(load_image(dir / "g.png"), FormatError);
}

TEST(SaveImage, RoundTripAndClamping) {
  const auto dir = testutil::scratch_dir("save");
  const Image q = testutil::quantized_image(3, 5, 7, 3);
  save_image(q, dir / "q.png");
  EXPECT_EQ(load_image(dir / "q.png"), q);

  Image odd = Image::chw(3, 1, 2);
  odd.at(0, 0, 0) = 1.7f;
  odd.at(0, 0, 1) = -0.2f;
  save_image(odd, dir / "o.png");
  const Image back = load_image(dir / "o.png");
  EXPECT_EQ(back.at(0, 0, 0), 1.0f);
  EXPECT_EQ(back.at(0, 0, 1), 0.0f);
  EXPECT_THROW(save_image(q, dir / "no" / "such" / "dir" / "x.png"), IoError);
}

TEST(Annotations, BasicParse) {
  const auto boxes = parse_annotations_text("0,0,10,0,10,10,0,10,HELLO\n0,0,10,0,10,10,0,10,###\n", 100, 100);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0].transcription, "HELLO");
  EXPECT_TRUE(boxes[0].care);
  EXPECT_EQ(boxes[0].quad[2], (Point{10, 10}));
  EXPECT_FALSE(boxes[1].care);
}

TEST(Annotations, SevenCoordinatesIsParseErrorWithLine) {
  try {
    parse_annotations_text("0,0,10,0,10,10,0,10,OK\n0,0,10,0,10,10,0,BAD\n", 100, 100);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(Annotations, BomCrlfCommasAndClipping) {
  const std::string text = "\xEF\xBB\xBF" "0,0,10,0,10,10,0,10,a,b\r\n\r\n-3,0,120,0,120,10,-3,10,WIDE\r\n";
  const auto boxes = parse_annotations_text(text, 100, 50);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0].transcription, "a,b");
  EXPECT_EQ(boxes[1].quad[0].x, 0.0);
  EXPECT_EQ(boxes[1].quad[1].x, 100.0);
}

TEST(Annotations, SerializeRoundTripProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TextBox> boxes;
    for (int i = 0; i < trial % 5; ++i) {
      const double x0 = u(rng), y0 = u(rng) / 2;
      boxes.push_back(TextBox::rect(x0, y0, x0 + 1 + u(rng) / 4, y0 + 1 + u(rng) / 8,
                                    i % 3 == 0 ? std::string(kDontCare) : "w" + std::to_string(i), i % 3 != 0));
    }
    EXPECT_EQ(parse_annotations_text(serialize_annotations(boxes), 400, 300), boxes);
  }
}

TEST(Quads, OrientationHelpers) {
  auto r = TextBox::rect(0, 0, 4, 2);
  EXPECT_DOUBLE_EQ(signed_area(r.quad), 8.0);
  EXPECT_TRUE(is_valid_quad(r.quad));
  auto ccw = r.quad;
  std::swap(ccw[1], ccw[3]);
  EXPECT_LT(signed_area(ccw), 0.0);
  make_clockwise(ccw);
  EXPECT_EQ(ccw, r.quad);
  std::array<Point, 4> bowtie{Point{0, 0}, Point{4, 4}, Point{4, 0}, Point{0, 4}};
  EXPECT_FALSE(is_valid_quad(bowtie));
}

// Attention.

TEST(Attention, ConstantImages) {
  for (float v : testutil::vals(compute_attention(Image::chw(3, 4, 4, 0.0f)).base)) EXPECT_EQ(v, 1.0f);
  for (float v : testutil::vals(compute_attention(Image::chw(3, 4, 4, 1.0f)).base)) EXPECT_NEAR(v, 0.0f, 1e-6);
}

TEST(Attention, RedPixel) {
  Image img = Image::chw(3, 1, 1);
  img.at(0, 0, 0) = 1.0f;
  EXPECT_NEAR(compute_attention(img).base[0], 0.701, 1e-6);
}

TEST(Attention, MonotoneInBrightness) {
  Image img = testutil::random_image(3, 8, 8, 4, 0.0f, 0.9f);
  const Tensor before = compute_attention(img).base;
  img.at(1, 3, 5) += 0.1f;
  const Tensor after = compute_attention(img).base;
  EXPECT_LE(after.at(0, 3, 5), before.at(0, 3, 5));
}

TEST(Pyramid, HandCases) {
  AttentionMap m{Tensor({1, 2, 2}, std::vector<float>{1, 0, 0, 0}), {}};
  EXPECT_EQ(build_pyramid(m, 1).level(1)[0], 1.0f);

  Tensor checker({1, 4, 4}, 0.0f);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker.at(0, y, x) = static_cast<float>((x + y) % 2);
  for (float v : testutil::vals(build_pyramid(AttentionMap{checker, {}}, 1).level(1))) EXPECT_EQ(v, 1.0f);

  const auto c = build_pyramid(AttentionMap{Tensor({1, 16, 16}, 0.3f), {}}, 4);
  ASSERT_EQ(c.levels(), 4);
  EXPECT_EQ(c.level(4).height(), 1);
  for (int k = 0; k <= 4; ++k)
    for (float v : testutil::vals(c.level(k))) EXPECT_EQ(v, 0.3f);
}

TEST(Pyramid, IndivisibleIsShapeError) {
  EXPECT_THROW(build_pyramid(AttentionMap{Tensor({1, 24, 24}, 0.0f), {}}, 4), ShapeError);
}
