#include "lowlight/edge.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lowlight/attention.hpp"
#include "lowlight/error.hpp"
#include "lowlight/optim.hpp"

namespace lowlight {

EdgeMap teacher_edges(const Image& image) {
  const Tensor y = luma(image);
  const int h = y.height(), w = y.width();
  const float norm = 1.0f / (4.0f * std::sqrt(2.0f));
  auto px = [&](int r, int c) { return y.at(0, std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1)); };
  EdgeMap e = EdgeMap::zeros(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const float gx = (px(r - 1, c + 1) + 2.0f * px(r, c + 1) + px(r + 1, c + 1)) -
                       (px(r - 1, c - 1) + 2.0f * px(r, c - 1) + px(r + 1, c - 1));
      const float gy = (px(r + 1, c - 1) + 2.0f * px(r + 1, c) + px(r + 1, c + 1)) -
                       (px(r - 1, c - 1) + 2.0f * px(r - 1, c) + px(r - 1, c + 1));
      e.values.at(0, r, c) = std::clamp(std::sqrt(gx * gx + gy * gy) * norm, 0.0f, 1.0f);
    }
  }
  return e;
}

UNetSpec default_edge_spec() {
  UNetSpec s;
  s.in_channels = 3;
  s.out_channels = 1;
  s.encoder_widths = {16, 32, 64};
  s.bottleneck_width = 128;
  s.leaky_slope = 0.2f;
  s.sigmoid_output = true;
  return s;
}

EdgeEstimator::EdgeEstimator(UNetSpec spec, std::uint64_t seed) : net_(std::move(spec), seed) {
  if (net_.spec().in_channels != 3 || net_.spec().out_channels != 1 || !net_.spec().sigmoid_output) {
    throw ArgumentError("edge estimator must map 3 channels to 1 sigmoid channel");
  }
}

EdgeEstimator::EdgeEstimator(UNet net) : net_(std::move(net)) {
  if (net_.spec().in_channels != 3 || net_.spec().out_channels != 1 || !net_.spec().sigmoid_output) {
    throw ArgumentError("edge estimator must map 3 channels to 1 sigmoid channel");
  }
}

EdgeMap estimate_edges(const Image& image, const EdgeEstimator& estimator) {
  const int m = estimator.size_multiple();
  if (image.rank() != 3 || image.channels() != 3 || image.height() % m || image.width() % m) {
    throw ShapeError("estimate_edges: image " + shape_string(image.shape()) + " must be 3-channel with sides divisible by " +
                     std::to_string(m));
  }
  return {estimator.forward(ag::constant(image))->value};
}

namespace {

Tensor crop(const Tensor& t, int y0, int x0, int h, int w) {
  Tensor out = Tensor::chw(t.channels(), h, w);
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(&t.at(c, y0 + y, x0), w, &out.at(c, y, 0));
  return out;
}

}  // namespace

EdgeTrainResult train_edge_estimator(const std::vector<PairedSample>& samples, const EdgeTrainConfig& config,
                                     const EdgeTeacher& teacher) {
  if (samples.empty()) throw ArgumentError("train_edge_estimator: empty sample list");
  if (config.steps < 0 || !(config.learning_rate > 0.0)) throw ArgumentError("train_edge_estimator: bad config");

  EdgeTrainResult result{EdgeEstimator(config.spec, config.seed), {}};
  EdgeEstimator& est = result.estimator;
  const int m = est.size_multiple();

  // Teacher targets are computed once per sample on the bright image.
  std::vector<Tensor> targets;
  for (const auto& s : samples) {
    require_same_shape(s.low, s.gt, "train_edge_estimator");
    EdgeMap t = teacher(s.gt);
    if (t.values.height() != s.gt.height() || t.values.width() != s.gt.width() || t.values.channels() != 1) {
      throw ContractError("edge teacher returned " + shape_string(t.values.shape()) + " for image " +
                          shape_string(s.gt.shape()));
    }
    targets.push_back(std::move(t.values));
  }

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(est.params());
  result.loss_history.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const std::size_t idx = static_cast<std::size_t>(step) % samples.size();
    const Image& low = samples[idx].low;
    int h = low.height() - low.height() % m;
    int w = low.width() - low.width() % m;
    if (config.crop > 0) {
      h = std::min(h, config.crop - config.crop % m);
      w = std::min(w, config.crop - config.crop % m);
    }
    if (h <= 0 || w <= 0) throw ShapeError("train_edge_estimator: sample smaller than " + std::to_string(m));
    const int y0 = std::uniform_int_distribution<int>(0, low.height() - h)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, low.width() - w)(rng);

    est.params().zero_grad();
    auto pred = est.forward(ag::constant(crop(low, y0, x0, h, w)));
    auto loss = ag::mean_abs_diff(pred, ag::constant(crop(targets[idx], y0, x0, h, w)));
    ag::backward(loss);
    adam.step(config.learning_rate);
    result.loss_history.push_back(loss->scalar);
  }
  est.params().zero_grad();
  est.params().set_trainable(false);
  return result;
}

}  // namespace lowlight
