#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lowlight/domain.hpp"
#include "lowlight/unet.hpp"

namespace lowlight {

/// 1×H×W edge probabilities in [0,1].
struct EdgeMap {
  Tensor values;

  static EdgeMap zeros(int height, int width) { return {Tensor::chw(1, height, width)}; }
};

/// Any image→EdgeMap callable can stand in for the default teacher
/// (e.g. an external RCF predictor).
using EdgeTeacher = std::function<EdgeMap(const Image&)>;

/// Sobel gradient magnitude of the luma, divided by its maximum 4·sqrt(2)
/// and clamped to [0,1]. Borders replicate the outermost pixels.
EdgeMap teacher_edges(const Image& image);

/// Edge U-Net: three input channels, one sigmoid output channel.
UNetSpec default_edge_spec();

class EdgeEstimator {
 public:
  EdgeEstimator() : EdgeEstimator(default_edge_spec(), 0) {}
  EdgeEstimator(UNetSpec spec, std::uint64_t seed);
  explicit EdgeEstimator(UNet net);

  ag::Var forward(const ag::Var& image) const { return net_.forward(image); }

  const UNet& net() const noexcept { return net_; }
  UNet& net() noexcept { return net_; }
  ParamSet& params() noexcept { return net_.params(); }
  const ParamSet& params() const noexcept { return net_.params(); }
  /// Spatial sizes must be divisible by this.
  int size_multiple() const noexcept { return 1 << net_.spec().depth(); }

 private:
  UNet net_;
};

/// Runs the estimator without recording gradients.
EdgeMap estimate_edges(const Image& image, const EdgeEstimator& estimator);

struct EdgeTrainConfig {
  int steps = 200;
  double learning_rate = 1e-3;
  int crop = 0;  // 0: use the whole image (trimmed to the size multiple)
  std::uint64_t seed = 0;
  UNetSpec spec = default_edge_spec();
};

struct EdgeTrainResult {
  EdgeEstimator estimator;
  std::vector<double> loss_history;
};

/// Fits the estimator so that estimate(low) matches teacher(gt) in mean
/// absolute error. The teacher always sees the ground-truth image.
EdgeTrainResult train_edge_estimator(const std::vector<PairedSample>& samples, const EdgeTrainConfig& config,
                                     const EdgeTeacher& teacher = teacher_edges);

}  // namespace lowlight
