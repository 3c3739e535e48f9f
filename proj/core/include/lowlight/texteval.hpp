#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lowlight/autograd.hpp"
#include "lowlight/domain.hpp"
#include "lowlight/params.hpp"

namespace lowlight {

/// 1×(H/2)×(W/2) character-region heatmap.
struct RegionScoreMap {
  Tensor values;
};

/// Source of region scores R(·). Implementations must be deterministic and,
/// when backed by a network, differentiable with respect to the image.
class RegionScoreProvider {
 public:
  virtual ~RegionScoreProvider() = default;
  /// image: 3×H×W with even H, W. Returns 1×(H/2)×(W/2).
  virtual ag::Var score(const ag::Var& image) const = 0;
  virtual std::string kind() const = 0;
};

/// Checks the even-size precondition and the provider's output contract.
ag::Var region_score(const ag::Var& image, const RegionScoreProvider& provider);
RegionScoreMap region_score(const Image& image, const RegionScoreProvider& provider);

/// Analytic stand-in: 2×2 mean-pooled BT.601 luma.
class LumaPoolProvider final : public RegionScoreProvider {
 public:
  ag::Var score(const ag::Var& image) const override;
  std::string kind() const override { return "luma-pool"; }
};

struct RegionNetConfig {
  int width1 = 8;
  int width2 = 16;
  float leaky_slope = 0.2f;
};

/// Small convolutional region-score network: two 3×3 conv at full
/// resolution, 2×2 max pool, two 3×3 conv, a 1×1 head and a sigmoid.
/// Parameters are frozen unless explicitly made trainable.
class RegionNet final : public RegionScoreProvider {
 public:
  RegionNet(RegionNetConfig config, std::uint64_t seed);
  RegionNet(RegionNetConfig config, ParamSet params, std::string origin);

  ag::Var score(const ag::Var& image) const override;
  std::string kind() const override { return "region-net/" + origin_; }

  const RegionNetConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  /// Writes the weights in the checkpoint container format.
  void save(const std::filesystem::path& path) const;
  /// Loads externally supplied weights; the result is frozen.
  static RegionNet load(const std::filesystem::path& path);

 private:
  RegionNetConfig config_;
  ParamSet params_;
  std::string origin_;
};

struct RegionNetTrainConfig {
  int steps = 300;
  double learning_rate = 1e-3;  // 3e-3 saturates the sigmoid head at zero
  std::uint64_t seed = 0;
  RegionNetConfig net;
};

struct RegionNetTrainResult {
  RegionNet net;
  std::vector<double> loss_history;
};

/// Fits a RegionNet to synth_region_target heatmaps (mean squared error),
/// then freezes it.
RegionNetTrainResult train_region_net(const std::vector<Image>& images,
                                      const std::vector<std::vector<TextBox>>& boxes,
                                      const RegionNetTrainConfig& config);

/// Half-resolution heatmap with one Gaussian (peak 1 at the center, sigma
/// 0.25 in box-normalized units) per care box, warped onto the quad and
/// composited by per-pixel max. Half-res pixel (i,j) samples the image
/// point (2j+1, 2i+1).
RegionScoreMap synth_region_target(const std::vector<TextBox>& boxes, int width, int height);

struct BoxExtractionParams {
  double region_threshold = 0.7;
  double link_threshold = 0.4;
  int min_area = 2;  // in half-resolution pixels
};

/// Connected components of the map above link_threshold whose peak reaches
/// region_threshold, returned as axis-aligned boxes in image coordinates.
std::vector<TextBox> extract_boxes(const RegionScoreMap& map, const BoxExtractionParams& params = {});

/// Polygon intersection over union; 0 when either quad is degenerate.
double iou(const TextBox& a, const TextBox& b);
double intersection_area(const TextBox& a, const TextBox& b);

struct MatchPair {
  int pred = -1;
  int gt = -1;
  double iou = 0.0;
};

struct DetectionMatch {
  std::vector<MatchPair> pairs;
  std::vector<int> unmatched_pred;
  std::vector<int> unmatched_gt;
  /// Predictions absorbed by don't-care ground truths.
  std::vector<int> ignored_pred;
  /// Don't-care ground-truth indices.
  std::vector<int> ignored_gt;

  int counted_predictions() const noexcept {
    return static_cast<int>(pairs.size() + unmatched_pred.size());
  }
  int care_ground_truths() const noexcept { return static_cast<int>(pairs.size() + unmatched_gt.size()); }
};

/// Greedy one-to-one matching in descending IoU order over care ground
/// truths, pairs below threshold excluded. Left-over predictions that
/// overlap a don't-care box are ignored rather than counted as false.
DetectionMatch match_detections(const std::vector<TextBox>& pred, const std::vector<TextBox>& gt,
                                double threshold = 0.5);

struct HMean {
  double precision = 0.0;
  double recall = 0.0;
  double hmean = 0.0;
};

HMean h_mean(int matches, int care_gt_count, int counted_pred_count);
HMean h_mean(const DetectionMatch& match, int care_gt_count, int counted_pred_count);

/// Maps a cropped word image to its transcription.
using Recognizer = std::function<std::string(const Image& crop)>;

/// Runs an external command with the crop's PNG path appended and returns
/// its trimmed standard output.
Recognizer make_command_recognizer(std::string command);

bool words_match(std::string_view recognized, std::string_view truth);

struct SpottingCounts {
  int correct = 0;
  int total = 0;  // care ground-truth words
  double accuracy() const noexcept { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

/// Two-stage spotting: recognizes the axis-aligned crop of each matched
/// prediction with IoU above min_iou and compares case-insensitively,
/// without a lexicon. Recognizer exceptions count as misses.
SpottingCounts spotting_counts(const Image& image, const std::vector<TextBox>& pred,
                               const std::vector<TextBox>& gt, const DetectionMatch& match,
                               const Recognizer& recognizer, double min_iou = 0.5);
double spotting_accuracy(const Image& image, const std::vector<TextBox>& pred, const std::vector<TextBox>& gt,
                         const DetectionMatch& match, const Recognizer& recognizer);

/// Detection results, one "x1,y1,...,x4,y4" line per box.
std::string serialize_detections(const std::vector<TextBox>& boxes);
void write_detections(const std::vector<TextBox>& boxes, const std::filesystem::path& path);
/// Accepts bare 8-coordinate lines or full annotation lines.
std::vector<TextBox> parse_detections(const std::filesystem::path& path, int width, int height);

}  // namespace lowlight
