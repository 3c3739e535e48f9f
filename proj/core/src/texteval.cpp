#include "lowlight/texteval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <opencv2/imgproc.hpp>
#include <random>
#include <sstream>
#include <unistd.h>

#include "lowlight/archive.hpp"
#include "lowlight/error.hpp"
#include "lowlight/optim.hpp"

namespace lowlight {

// ---------------------------------------------------------------------------
// Region-score providers

ag::Var region_score(const ag::Var& image, const RegionScoreProvider& provider) {
  const Tensor& v = image->value;
  if (v.rank() != 3 || v.channels() != 3) {
    throw ShapeError("region_score: expected a 3-channel image, got " + shape_string(v.shape()));
  }
  if (v.height() % 2 || v.width() % 2) {
    throw ShapeError("region_score: image sides must be even, got " + std::to_string(v.height()) + "x" +
                     std::to_string(v.width()));
  }
  auto out = provider.score(image);
  const std::vector<int> expected{1, v.height() / 2, v.width() / 2};
  if (out->value.shape() != expected) {
    throw ContractError("region-score provider '" + provider.kind() + "' returned " +
                        shape_string(out->value.shape()) + ", expected " + shape_string(expected));
  }
  return out;
}

RegionScoreMap region_score(const Image& image, const RegionScoreProvider& provider) {
  return {region_score(ag::constant(image), provider)->value};
}

ag::Var LumaPoolProvider::score(const ag::Var& image) const { return ag::avg_pool2x2(ag::luma(image)); }

namespace {

std::vector<std::tuple<std::string, int, int, int>> region_net_layers(const RegionNetConfig& c) {
  return {{"conv1", 3, c.width1, 3},
          {"conv2", c.width1, c.width1, 3},
          {"conv3", c.width1, c.width2, 3},
          {"conv4", c.width2, c.width2, 3},
          {"head", c.width2, 1, 1}};
}

nlohmann::json region_config_json(const RegionNetConfig& c) {
  return {{"width1", c.width1}, {"width2", c.width2}, {"leaky_slope", c.leaky_slope}};
}

}  // namespace

RegionNet::RegionNet(RegionNetConfig config, std::uint64_t seed) : config_(config), origin_("random") {
  if (config_.width1 <= 0 || config_.width2 <= 0) throw ArgumentError("RegionNet widths must be positive");
  std::mt19937_64 rng(seed);
  for (const auto& [name, in, out, k] : region_net_layers(config_)) {
    params_.add_uniform(name + ".weight", {out, in, k, k}, in * k * k, rng);
    params_.add_uniform(name + ".bias", {out}, in * k * k, rng);
  }
  params_.set_trainable(false);
}

RegionNet::RegionNet(RegionNetConfig config, ParamSet params, std::string origin)
    : config_(config), params_(std::move(params)), origin_(std::move(origin)) {
  for (const auto& [name, in, out, k] : region_net_layers(config_)) {
    if (params_.get(name + ".weight")->value.shape() != std::vector<int>{out, in, k, k}) {
      throw ShapeError("RegionNet parameter '" + name + "' has the wrong shape");
    }
  }
  params_.set_trainable(false);
}

ag::Var RegionNet::score(const ag::Var& image) const {
  auto conv = [&](const std::string& n, const ag::Var& x) {
    return ag::conv2d(x, params_.get(n + ".weight"), params_.get(n + ".bias"));
  };
  const float s = config_.leaky_slope;
  auto x = ag::leaky_relu(conv("conv1", image), s);
  x = ag::leaky_relu(conv("conv2", x), s);
  x = ag::max_pool2x2(x);
  x = ag::leaky_relu(conv("conv3", x), s);
  x = ag::leaky_relu(conv("conv4", x), s);
  return ag::sigmoid(conv("head", x));
}

void RegionNet::save(const std::filesystem::path& path) const {
  Archive ar;
  ar.meta = {{"kind", "region-net"}, {"config", region_config_json(config_)}};
  ar.add_params("region", params_);
  ar.write(path);
}

RegionNet RegionNet::load(const std::filesystem::path& path) {
  const Archive ar = Archive::read(path);
  if (ar.meta.value("kind", std::string{}) != "region-net") {
    throw FormatError(path.string() + " does not hold region-score network weights");
  }
  const auto& c = ar.meta.at("config");
  RegionNetConfig config;
  config.width1 = c.value("width1", config.width1);
  config.width2 = c.value("width2", config.width2);
  config.leaky_slope = c.value("leaky_slope", config.leaky_slope);
  return RegionNet(config, ar.params("region"), "file");
}

RegionNetTrainResult train_region_net(const std::vector<Image>& images,
                                      const std::vector<std::vector<TextBox>>& boxes,
                                      const RegionNetTrainConfig& config) {
  if (images.empty() || images.size() != boxes.size()) {
    throw ArgumentError("train_region_net: need one box list per image and at least one image");
  }
  std::vector<Tensor> targets;
  for (std::size_t i = 0; i < images.size(); ++i) {
    targets.push_back(synth_region_target(boxes[i], images[i].width(), images[i].height()).values);
  }
  RegionNetTrainResult result{RegionNet(config.net, RegionNet(config.net, config.seed).params().clone(), "trained"), {}};
  RegionNet& net = result.net;
  net.params().set_trainable(true);
  Adam adam(net.params());
  for (int step = 0; step < config.steps; ++step) {
    const std::size_t i = static_cast<std::size_t>(step) % images.size();
    net.params().zero_grad();
    auto pred = region_score(ag::constant(images[i]), net);
    auto loss = ag::mean_squared_diff(pred, ag::constant(targets[i]));
    ag::backward(loss);
    adam.step(config.learning_rate);
    result.loss_history.push_back(loss->scalar);
  }
  net.params().set_trainable(false);
  return result;
}

// ---------------------------------------------------------------------------
// Heatmap synthesis and box extraction

RegionScoreMap synth_region_target(const std::vector<TextBox>& boxes, int width, int height) {
  const int hw = width / 2, hh = height / 2;
  RegionScoreMap map{Tensor::chw(1, hh, hw)};
  constexpr double kSigma = 0.25;
  const std::array<cv::Point2f, 4> square{cv::Point2f(0, 0), cv::Point2f(1, 0), cv::Point2f(1, 1),
                                          cv::Point2f(0, 1)};
  for (const auto& box : boxes) {
    if (!box.care || !is_valid_quad(box.quad)) continue;
    auto quad = box.quad;
    make_clockwise(quad);
    std::array<cv::Point2f, 4> src;
    double x_lo = quad[0].x, x_hi = quad[0].x, y_lo = quad[0].y, y_hi = quad[0].y;
    for (std::size_t i = 0; i < 4; ++i) {
      src[i] = cv::Point2f(static_cast<float>(quad[i].x), static_cast<float>(quad[i].y));
      x_lo = std::min(x_lo, quad[i].x);
      x_hi = std::max(x_hi, quad[i].x);
      y_lo = std::min(y_lo, quad[i].y);
      y_hi = std::max(y_hi, quad[i].y);
    }
    const cv::Mat hm = cv::getPerspectiveTransform(src.data(), square.data());
    const auto* hp = hm.ptr<double>(0);
    const int j0 = std::max(0, static_cast<int>(std::floor((x_lo - 1.0) / 2.0)));
    const int j1 = std::min(hw - 1, static_cast<int>(std::ceil((x_hi - 1.0) / 2.0)));
    const int i0 = std::max(0, static_cast<int>(std::floor((y_lo - 1.0) / 2.0)));
    const int i1 = std::min(hh - 1, static_cast<int>(std::ceil((y_hi - 1.0) / 2.0)));
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const double px = 2.0 * j + 1.0, py = 2.0 * i + 1.0;
        const double wz = hp[6] * px + hp[7] * py + hp[8];
        const double u = (hp[0] * px + hp[1] * py + hp[2]) / wz;
        const double v = (hp[3] * px + hp[4] * py + hp[5]) / wz;
        if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) continue;
        const double d2 = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5);
        const auto val = static_cast<float>(std::exp(-d2 / (2.0 * kSigma * kSigma)));
        float& dst = map.values.at(0, i, j);
        dst = std::max(dst, val);
      }
    }
  }
  return map;
}

std::vector<TextBox> extract_boxes(const RegionScoreMap& map, const BoxExtractionParams& params) {
  const Tensor& v = map.values;
  cv::Mat mask(v.height(), v.width(), CV_8U);
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) mask.at<unsigned char>(y, x) = v.at(0, y, x) >= params.link_threshold ? 1 : 0;
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);
  std::vector<float> peak(static_cast<std::size_t>(n), 0.0f);
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      const int l = labels.at<int>(y, x);
      if (l > 0) peak[static_cast<std::size_t>(l)] = std::max(peak[static_cast<std::size_t>(l)], v.at(0, y, x));
    }
  }
  std::vector<TextBox> boxes;
  for (int l = 1; l < n; ++l) {
    if (peak[static_cast<std::size_t>(l)] < params.region_threshold) continue;
    if (stats.at<int>(l, cv::CC_STAT_AREA) < params.min_area) continue;
    const double x = stats.at<int>(l, cv::CC_STAT_LEFT), y = stats.at<int>(l, cv::CC_STAT_TOP);
    const double w = stats.at<int>(l, cv::CC_STAT_WIDTH), h = stats.at<int>(l, cv::CC_STAT_HEIGHT);
    boxes.push_back(TextBox::rect(2.0 * x, 2.0 * y, 2.0 * (x + w), 2.0 * (y + h)));
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Matching and metrics

namespace {

namespace bg = boost::geometry;
using BPoint = bg::model::d2::point_xy<double>;
using BPolygon = bg::model::polygon<BPoint>;

bool to_polygon(const TextBox& box, BPolygon& poly) {
  if (!is_valid_quad(box.quad)) return false;
  for (const auto& p : box.quad) bg::append(poly.outer(), BPoint(p.x, p.y));
  bg::correct(poly);
  return bg::is_valid(poly);
}

}  // namespace

double intersection_area(const TextBox& a, const TextBox& b) {
  BPolygon pa, pb;
  if (!to_polygon(a, pa) || !to_polygon(b, pb)) return 0.0;
  if (a.quad == b.quad) return bg::area(pa);
  std::vector<BPolygon> out;
  try {
    bg::intersection(pa, pb, out);
  } catch (const bg::exception&) {
    return 0.0;
  }
  double area = 0.0;
  for (const auto& p : out) area += bg::area(p);
  return area;
}

double iou(const TextBox& a, const TextBox& b) {
  BPolygon pa, pb;
  if (!to_polygon(a, pa) || !to_polygon(b, pb)) return 0.0;
  const double inter = intersection_area(a, b);
  const double uni = bg::area(pa) + bg::area(pb) - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

DetectionMatch match_detections(const std::vector<TextBox>& pred, const std::vector<TextBox>& gt, double threshold) {
  DetectionMatch m;
  struct Candidate {
    double iou;
    int p;
    int g;
  };
  std::vector<Candidate> candidates;
  for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
    if (!gt[static_cast<std::size_t>(g)].care) {
      m.ignored_gt.push_back(g);
      continue;
    }
    for (int p = 0; p < static_cast<int>(pred.size()); ++p) {
      const double v = iou(pred[static_cast<std::size_t>(p)], gt[static_cast<std::size_t>(g)]);
      if (v > 0.0 && v >= threshold) candidates.push_back({v, p, g});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> pred_used(pred.size(), false), gt_used(gt.size(), false);
  for (const auto& c : candidates) {
    if (pred_used[static_cast<std::size_t>(c.p)] || gt_used[static_cast<std::size_t>(c.g)]) continue;
    pred_used[static_cast<std::size_t>(c.p)] = gt_used[static_cast<std::size_t>(c.g)] = true;
    m.pairs.push_back({c.p, c.g, c.iou});
  }
  for (int p = 0; p < static_cast<int>(pred.size()); ++p) {
    if (pred_used[static_cast<std::size_t>(p)]) continue;
    const bool absorbed = std::any_of(m.ignored_gt.begin(), m.ignored_gt.end(), [&](int g) {
      return intersection_area(pred[static_cast<std::size_t>(p)], gt[static_cast<std::size_t>(g)]) > 0.0;
    });
    (absorbed ? m.ignored_pred : m.unmatched_pred).push_back(p);
  }
  for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
    if (gt[static_cast<std::size_t>(g)].care && !gt_used[static_cast<std::size_t>(g)]) m.unmatched_gt.push_back(g);
  }
  return m;
}

HMean h_mean(int matches, int care_gt_count, int counted_pred_count) {
  HMean r;
  r.precision = counted_pred_count > 0 ? static_cast<double>(matches) / counted_pred_count : 0.0;
  r.recall = care_gt_count > 0 ? static_cast<double>(matches) / care_gt_count : 1.0;
  const double s = r.precision + r.recall;
  r.hmean = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

HMean h_mean(const DetectionMatch& match, int care_gt_count, int counted_pred_count) {
  return h_mean(static_cast<int>(match.pairs.size()), care_gt_count, counted_pred_count);
}

// ---------------------------------------------------------------------------
// Spotting

bool words_match(std::string_view recognized, std::string_view truth) {
  if (recognized.size() != truth.size()) return false;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto a = static_cast<unsigned char>(recognized[i]);
    const auto b = static_cast<unsigned char>(truth[i]);
    if (std::tolower(a) != std::tolower(b)) return false;
  }
  return true;
}

Recognizer make_command_recognizer(std::string command) {
  return [command = std::move(command)](const Image& crop) -> std::string {
    static std::atomic<unsigned> counter{0};
    const auto path = std::filesystem::temp_directory_path() /
                      ("lowlight_crop_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".png");
    save_image(crop, path);
    const std::string cmd = command + " '" + path.string() + "'";
    std::string output;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) {
      std::filesystem::remove(path);
      throw ContractError("cannot run recognizer: " + command);
    }
    char buf[256];
    while (std::fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = ::pclose(pipe);
    std::filesystem::remove(path);
    if (status != 0) throw ContractError("recognizer exited with status " + std::to_string(status));
    while (!output.empty() && std::isspace(static_cast<unsigned char>(output.back()))) output.pop_back();
    std::size_t start = 0;
    while (start < output.size() && std::isspace(static_cast<unsigned char>(output[start]))) ++start;
    return output.substr(start);
  };
}

namespace {

Image crop_box(const Image& image, const TextBox& box) {
  double x_lo = box.quad[0].x, x_hi = x_lo, y_lo = box.quad[0].y, y_hi = y_lo;
  for (const auto& p : box.quad) {
    x_lo = std::min(x_lo, p.x);
    x_hi = std::max(x_hi, p.x);
    y_lo = std::min(y_lo, p.y);
    y_hi = std::max(y_hi, p.y);
  }
  const int x0 = std::clamp(static_cast<int>(std::floor(x_lo)), 0, image.width());
  const int x1 = std::clamp(static_cast<int>(std::ceil(x_hi)), 0, image.width());
  const int y0 = std::clamp(static_cast<int>(std::floor(y_lo)), 0, image.height());
  const int y1 = std::clamp(static_cast<int>(std::ceil(y_hi)), 0, image.height());
  if (x1 <= x0 || y1 <= y0) return {};
  Image out = Image::chw(3, y1 - y0, x1 - x0);
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y1; ++y) std::copy_n(&image.at(c, y, x0), x1 - x0, &out.at(c, y - y0, 0));
  return out;
}

}  // namespace

SpottingCounts spotting_counts(const Image& image, const std::vector<TextBox>& pred, const std::vector<TextBox>& gt,
                               const DetectionMatch& match, const Recognizer& recognizer, double min_iou) {
  SpottingCounts counts;
  counts.total = static_cast<int>(std::count_if(gt.begin(), gt.end(), [](const TextBox& b) { return b.care; }));
  for (const auto& pair : match.pairs) {
    if (!(pair.iou > min_iou)) continue;
    const TextBox& truth = gt.at(static_cast<std::size_t>(pair.gt));
    if (!truth.care) continue;
    const Image crop = crop_box(image, pred.at(static_cast<std::size_t>(pair.pred)));
    if (crop.empty()) continue;
    try {
      if (words_match(recognizer(crop), truth.transcription)) ++counts.correct;
    } catch (const std::exception& e) {
      spdlog::warn("recognizer failed on prediction {}: {}", pair.pred, e.what());
    }
  }
  return counts;
}

double spotting_accuracy(const Image& image, const std::vector<TextBox>& pred, const std::vector<TextBox>& gt,
                         const DetectionMatch& match, const Recognizer& recognizer) {
  return spotting_counts(image, pred, gt, match, recognizer).accuracy();
}

// ---------------------------------------------------------------------------
// Submission files

std::string serialize_detections(const std::vector<TextBox>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (i) out += ',';
      out += std::to_string(static_cast<long long>(std::lround(b.quad[i].x)));
      out += ',';
      out += std::to_string(static_cast<long long>(std::lround(b.quad[i].y)));
    }
    out += '\n';
  }
  return out;
}

void write_detections(const std::vector<TextBox>& boxes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write detections " + path.string());
  out << serialize_detections(boxes);
}

std::vector<TextBox> parse_detections(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read detections " + path.string());
  std::string normalized, line;
  while (std::getline(in, line)) {
    if (std::count(line.begin(), line.end(), ',') == 7) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      line += ',';
    }
    normalized += line;
    normalized += '\n';
  }
  return parse_annotations_text(normalized, width, height);
}

}  // namespace lowlight
