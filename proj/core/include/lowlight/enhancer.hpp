#pragma once

#include <cstdint>

#include "lowlight/attention.hpp"
#include "lowlight/edge.hpp"
#include "lowlight/unet.hpp"

namespace lowlight {

/// Channel schedule of the enhancement generator. Four encoder levels,
/// a bottleneck and four decoder levels make nine conv blocks.
struct EnhancerConfig {
  std::vector<int> encoder_widths{32, 64, 128, 256};
  int bottleneck_width = 512;
  float leaky_slope = 0.2f;

  UNetSpec unet_spec() const;
};

void to_json(nlohmann::json& j, const EnhancerConfig& c);
void from_json(const nlohmann::json& j, EnhancerConfig& c);

/// Generator I' = F(I, E, S): a U-Net on the 4-channel [low ‖ edges] input
/// whose encoder skips are multiplied by the attention pyramid.
class Enhancer {
 public:
  Enhancer() : Enhancer(EnhancerConfig{}, 0) {}
  Enhancer(EnhancerConfig config, std::uint64_t seed);
  explicit Enhancer(UNet net);

  /// Unclamped output for training; records gradients on the parameters.
  ag::Var forward(const Image& low, const EdgeMap& edges, const AttentionMap& attention,
                  SkipMode mode = SkipMode::gated) const;

  const UNet& net() const noexcept { return net_; }
  ParamSet& params() noexcept { return net_.params(); }
  const ParamSet& params() const noexcept { return net_.params(); }
  std::size_t count_parameters() const { return net_.parameter_count(); }

  static constexpr int kSizeMultiple = 16;

 private:
  UNet net_;
};

/// Evaluation-time forward pass: output clamped to [0,1].
Image enhance(const Image& low, const EdgeMap& edges, const AttentionMap& attention, const Enhancer& enhancer);

/// Total scalar parameter count of an enhancer with this schedule.
std::size_t count_parameters(const EnhancerConfig& config);

}  // namespace lowlight
