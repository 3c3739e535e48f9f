#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowlight/params.hpp"

namespace lowlight {

struct UNetSpec {
  int in_channels = 4;
  int out_channels = 3;
  std::vector<int> encoder_widths{32, 64, 128, 256};
  int bottleneck_width = 512;
  float leaky_slope = 0.2f;
  bool sigmoid_output = false;

  int depth() const noexcept { return static_cast<int>(encoder_widths.size()); }
  void validate() const;
};

void to_json(nlohmann::json& j, const UNetSpec& s);
void from_json(const nlohmann::json& j, UNetSpec& s);

/// How encoder features reach the decoder.
enum class SkipMode {
  gated,    // feature × gate at the matching scale
  ungated,  // feature passed through unchanged
  zeroed,   // zero tensor of the feature's shape
};

/// Encoder blocks of two 3×3 conv + leaky ReLU separated by 2×2 max pooling,
/// a bottleneck block, decoder blocks of 2×2 transposed conv + concat + two
/// 3×3 conv, and a final 1×1 projection.
class UNet {
 public:
  UNet() = default;
  UNet(UNetSpec spec, std::uint64_t seed);
  UNet(UNetSpec spec, ParamSet params);

  /// gates[k] is the 1×H/2^k×W/2^k skip gate for encoder level k; only read
  /// in gated mode.
  ag::Var forward(const ag::Var& input, std::span<const Tensor> gates = {},
                  SkipMode mode = SkipMode::ungated) const;

  const UNetSpec& spec() const noexcept { return spec_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  /// Parameter names grouped by layer ("enc0.conv1" etc.).
  std::vector<std::string> layer_names() const;

 private:
  ag::Var block(const std::string& prefix, ag::Var x) const;

  UNetSpec spec_;
  ParamSet params_;
};

/// Parameter count implied by a spec, without allocating weights.
std::size_t unet_parameter_count(const UNetSpec& spec);

}  // namespace lowlight
