#include "lowlight/enhancer.hpp"

#include "lowlight/error.hpp"

namespace lowlight {

UNetSpec EnhancerConfig::unet_spec() const {
  UNetSpec s;
  s.in_channels = 4;
  s.out_channels = 3;
  s.encoder_widths = encoder_widths;
  s.bottleneck_width = bottleneck_width;
  s.leaky_slope = leaky_slope;
  s.sigmoid_output = false;
  return s;
}

void to_json(nlohmann::json& j, const EnhancerConfig& c) {
  j = nlohmann::json{{"encoder_widths", c.encoder_widths},
                     {"bottleneck_width", c.bottleneck_width},
                     {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, EnhancerConfig& c) {
  c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
  c.bottleneck_width = j.value("bottleneck_width", c.bottleneck_width);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
}

namespace {

void check_enhancer_spec(const UNetSpec& s) {
  if (s.depth() != 4 || s.in_channels != 4 || s.out_channels != 3 || s.sigmoid_output) {
    throw ArgumentError("enhancer needs 4 encoder levels, 4 input and 3 linear output channels");
  }
}

}  // namespace

Enhancer::Enhancer(EnhancerConfig config, std::uint64_t seed) : net_(config.unet_spec(), seed) {
  check_enhancer_spec(net_.spec());
}

Enhancer::Enhancer(UNet net) : net_(std::move(net)) { check_enhancer_spec(net_.spec()); }

ag::Var Enhancer::forward(const Image& low, const EdgeMap& edges, const AttentionMap& attention,
                          SkipMode mode) const {
  if (low.rank() != 3 || low.channels() != 3) {
    throw ShapeError("enhance: expected a 3-channel image, got " + shape_string(low.shape()));
  }
  const Tensor& e = edges.values;
  if (e.rank() != 3 || e.channels() != 1 || e.height() != low.height() || e.width() != low.width()) {
    throw ShapeError("enhance: edge map " + shape_string(e.shape()) + " does not match image " +
                     shape_string(low.shape()));
  }
  if (low.height() % kSizeMultiple || low.width() % kSizeMultiple) {
    throw ShapeError("enhance: image sides must be divisible by 16, got " + std::to_string(low.height()) + "x" +
                     std::to_string(low.width()));
  }
  std::vector<Tensor> gates;
  if (mode == SkipMode::gated) {
    if (attention.levels() < 3 || attention.base.height() != low.height() || attention.base.width() != low.width()) {
      throw ShapeError("enhance: attention pyramid must match the image and have at least 3 levels");
    }
    for (int k = 0; k < 4; ++k) gates.push_back(attention.level(k));
  }
  auto input = ag::concat_channels(ag::constant(low), ag::constant(e));
  return net_.forward(input, gates, mode);
}

Image enhance(const Image& low, const EdgeMap& edges, const AttentionMap& attention, const Enhancer& enhancer) {
  return clamped(enhancer.forward(low, edges, attention)->value);
}

std::size_t count_parameters(const EnhancerConfig& config) { return unet_parameter_count(config.unet_spec()); }

}  // namespace lowlight
