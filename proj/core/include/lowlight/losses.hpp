#pragma once

#include <array>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowlight/autograd.hpp"
#include "lowlight/domain.hpp"
#include "lowlight/texteval.hpp"

namespace lowlight {

/// Weights of the joint objective w1·L_l1 + w2·L_msssim + w3·L_text.
struct LossWeights {
  double l1 = 0.85;
  double ms_ssim = 0.15;
  double text = 0.425;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Per-scale weights as published for MS-SSIM; they sum to 1.0001.
inline constexpr std::array<double, 5> kPublishedMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// kPublishedMsSsimWeights[0..m) rescaled to sum exactly to 1.
std::vector<double> normalized_ms_ssim_weights(int m = 5);

/// Multi-scale SSIM settings. Contrast-structure terms at scales 1..M-1 and
/// the full SSIM at scale M are raised to the per-scale weights.
struct MsSsimParams {
  std::vector<double> scale_weights = normalized_ms_ssim_weights();
  int window_size = 11;
  double window_sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;

  int scales() const noexcept { return static_cast<int>(scale_weights.size()); }
  /// Smallest side length for which every scale still fits the window.
  int min_size() const noexcept { return window_size << (scales() - 1); }
  void validate() const;

  /// Default weights cut to the first m scales and renormalized to sum 1.
  static MsSsimParams with_scales(int m);
};

void to_json(nlohmann::json& j, const MsSsimParams& p);
void from_json(const nlohmann::json& j, MsSsimParams& p);

/// Which optional terms of the joint loss are active. The l1 term is always on.
struct LossToggles {
  bool ms_ssim = true;
  bool text = true;
};

/// Raw (unweighted) component losses; disabled terms are 0.
struct LossBreakdown {
  double l1 = 0.0;
  double ms_ssim = 0.0;
  double text = 0.0;
  double total = 0.0;
};

double l1_loss(const Image& pred, const Image& target);

/// Channel-averaged MS-SSIM. Negative per-scale terms are clamped to 0
/// before exponentiation, so the result lies in [0,1].
double ms_ssim(const Image& pred, const Image& target, const MsSsimParams& params = {});
double ms_ssim_loss(const Image& pred, const Image& target, const MsSsimParams& params = {});

/// Single-scale SSIM (mean SSIM map over channels), unclamped.
double ssim(const Image& pred, const Image& target, const MsSsimParams& params = MsSsimParams::with_scales(1));

/// MS-SSIM value and, when grad is non-null, d(ms_ssim)/d(pred) of pred's shape.
double ms_ssim_with_grad(const Tensor& pred, const Tensor& target, const MsSsimParams& params, Tensor* grad);

/// mean |R(pred) - R(target)| over the half-resolution region-score map.
double text_detection_loss(const Image& pred, const Image& target, const RegionScoreProvider& detector);

/// Weighted sum of precomputed components, honoring toggles.
LossBreakdown combine_losses(double l1, double ms_ssim_loss, double text, const LossWeights& weights,
                             const LossToggles& toggles = {});

LossBreakdown total_loss(const Image& pred, const Image& target, const RegionScoreProvider* detector,
                         const LossWeights& weights = {}, const MsSsimParams& params = {},
                         const LossToggles& toggles = {});

// Differentiable versions. Gradients flow into pred only; the detector's
// parameters receive none.
namespace ag {
Var l1_loss(const Var& pred, const Tensor& target);
Var ms_ssim_loss(const Var& pred, const Tensor& target, const MsSsimParams& params);
Var text_detection_loss(const Var& pred, const Tensor& target, const RegionScoreProvider& detector);
}  // namespace ag

struct LossTerms {
  ag::Var total;
  LossBreakdown breakdown;
};

LossTerms total_loss(const ag::Var& pred, const Image& target, const RegionScoreProvider* detector,
                     const LossWeights& weights, const MsSsimParams& params, const LossToggles& toggles);

}  // namespace lowlight
