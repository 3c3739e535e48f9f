#include "lowlight/domain.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "lowlight/error.hpp"

namespace lowlight {

TextBox TextBox::rect(double x0, double y0, double x1, double y1, std::string text, bool care) {
  TextBox b;
  b.quad = {Point{x0, y0}, Point{x1, y0}, Point{x1, y1}, Point{x0, y1}};
  b.transcription = std::move(text);
  b.care = care;
  return b;
}

std::string to_string(SourceTag tag) { return tag == SourceTag::real ? "real" : "synthetic"; }

SourceTag source_tag_from_string(const std::string& s) {
  if (s == "real") return SourceTag::real;
  if (s == "synthetic") return SourceTag::synthetic;
  throw ValidationError("unknown source tag '" + s + "' (expected real|synthetic)");
}

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("cannot read image " + path.string() + ": no such file");
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot decode image " + path.string());
  if (m.channels() != 3) {
    throw FormatError(path.string() + ": expected 3 channels, found " + std::to_string(m.channels()));
  }
  float scale = 0.0f;
  if (m.depth() == CV_8U) {
    scale = 255.0f;
  } else if (m.depth() == CV_16U) {
    scale = 65535.0f;
  } else {
    throw FormatError(path.string() + ": unsupported bit depth");
  }
  cv::Mat rgb;
  cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32F);  // exact for integer levels; divide below

  Image img = Image::chw(3, f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3f>(y);
    for (int x = 0; x < f.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][c] / scale;
  }
  return img;
}

namespace {

unsigned char quantize(float v) {
  if (!(v > 0.0f)) return 0;  // also maps NaN to 0
  if (v >= 1.0f) return 255;
  return static_cast<unsigned char>(std::lround(v * 255.0f));
}

void write_png(const cv::Mat& m, const std::filesystem::path& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

void save_image(const Image& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.channels() != 3) {
    throw ShapeError("save_image: expected a 3-channel image, got " + shape_string(image.shape()));
  }
  cv::Mat m(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      // OpenCV stores BGR.
      row[x] = cv::Vec3b(quantize(image.at(2, y, x)), quantize(image.at(1, y, x)), quantize(image.at(0, y, x)));
    }
  }
  write_png(m, path);
}

void save_gray(const Tensor& map, const std::filesystem::path& path) {
  if (map.rank() != 3 || map.channels() != 1) {
    throw ShapeError("save_gray: expected a 1-channel map, got " + shape_string(map.shape()));
  }
  cv::Mat m(map.height(), map.width(), CV_8UC1);
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) m.at<unsigned char>(y, x) = quantize(map.at(0, y, x));
  write_png(m, path);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view field, int line) {
  field = trim(field);
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError("invalid coordinate '" + std::string(field) + "'", line);
  }
  return v;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<TextBox> parse_annotations_text(std::string_view text, int width, int height) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<TextBox> boxes;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;

    std::array<double, 8> coords{};
    std::size_t pos = 0;
    for (int i = 0; i < 8; ++i) {
      const auto comma = line.find(',', pos);
      if (comma == std::string_view::npos) {
        throw ParseError("expected 8 coordinates and a transcription, found " + std::to_string(i) + " fields",
                         line_no);
      }
      coords[static_cast<std::size_t>(i)] = parse_number(line.substr(pos, comma - pos), line_no);
      pos = comma + 1;
    }
    TextBox box;
    box.transcription = std::string(line.substr(pos));
    box.care = box.transcription != kDontCare;
    bool clipped = false;
    for (int i = 0; i < 4; ++i) {
      double x = coords[static_cast<std::size_t>(2 * i)];
      double y = coords[static_cast<std::size_t>(2 * i + 1)];
      const double cx = std::clamp(x, 0.0, static_cast<double>(width));
      const double cy = std::clamp(y, 0.0, static_cast<double>(height));
      clipped = clipped || cx != x || cy != y;
      box.quad[static_cast<std::size_t>(i)] = Point{cx, cy};
    }
    if (clipped) spdlog::warn("annotation line {}: coordinates clipped to {}x{}", line_no, width, height);
    boxes.push_back(std::move(box));
  }
  return boxes;
}

std::vector<TextBox> parse_annotations(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read annotations " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_annotations_text(ss.str(), width, height);
}

std::string serialize_annotations(const std::vector<TextBox>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    for (const auto& p : b.quad) {
      out += format_number(p.x);
      out += ',';
      out += format_number(p.y);
      out += ',';
    }
    out += b.care ? b.transcription : std::string(kDontCare);
    out += '\n';
  }
  return out;
}

void write_annotations(const std::vector<TextBox>& boxes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write annotations " + path.string());
  out << serialize_annotations(boxes);
  if (!out) throw IoError("write failed for " + path.string());
}

double signed_area(const std::array<Point, 4>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point& a = q[i];
    const Point& b = q[(i + 1) % 4];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool segments_cross(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

bool is_valid_quad(const std::array<Point, 4>& q) {
  if (segments_cross(q[0], q[1], q[2], q[3]) || segments_cross(q[1], q[2], q[3], q[0])) return false;
  return std::abs(signed_area(q)) > 0.0;
}

void make_clockwise(std::array<Point, 4>& q) {
  if (signed_area(q) < 0.0) std::swap(q[1], q[3]);
}

}  // namespace lowlight
