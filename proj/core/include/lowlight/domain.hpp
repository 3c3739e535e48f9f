#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lowlight/tensor.hpp"

namespace lowlight {

/// 3×H×W planar RGB image with values in [0,1].
using Image = Tensor;

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// ICDAR15-style quadrilateral annotation.
struct TextBox {
  std::array<Point, 4> quad{};
  std::string transcription;
  bool care = true;

  bool operator==(const TextBox&) const = default;

  static TextBox rect(double x0, double y0, double x1, double y1, std::string text = "", bool care = true);
};

inline constexpr std::string_view kDontCare = "###";

enum class SourceTag { real, synthetic };

std::string to_string(SourceTag tag);
SourceTag source_tag_from_string(const std::string& s);

struct PairedSample {
  Image low;
  Image gt;
  std::vector<TextBox> boxes;
  std::string id;
  SourceTag source = SourceTag::synthetic;
};

/// Reads an 8- or 16-bit RGB PNG/JPEG and scales by the bit-depth maximum.
Image load_image(const std::filesystem::path& path);

/// Clamps to [0,1], quantizes to 8 bits and writes a PNG.
void save_image(const Image& image, const std::filesystem::path& path);
/// Writes a single-channel [0,1] map as an 8-bit grayscale PNG.
void save_gray(const Tensor& map, const std::filesystem::path& path);

/// Parses "x1,y1,...,x4,y4,transcription" lines. Out-of-bounds coordinates
/// are clipped to [0,width]×[0,height] with a logged warning.
std::vector<TextBox> parse_annotations(const std::filesystem::path& path, int width, int height);
std::vector<TextBox> parse_annotations_text(std::string_view text, int width, int height);

/// Inverse of parse_annotations_text; shortest round-trip number formatting.
std::string serialize_annotations(const std::vector<TextBox>& boxes);
void write_annotations(const std::vector<TextBox>& boxes, const std::filesystem::path& path);

/// Shoelace area, positive for clockwise quads in image (y-down) coordinates.
double signed_area(const std::array<Point, 4>& quad);
/// Positive area and no crossing edges.
bool is_valid_quad(const std::array<Point, 4>& quad);
/// Reorders vertices so signed_area is non-negative; keeps the first vertex.
void make_clockwise(std::array<Point, 4>& quad);

}  // namespace lowlight
