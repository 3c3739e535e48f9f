#include "lowlight/unet.hpp"

#include <random>

#include "lowlight/error.hpp"

namespace lowlight {
namespace {

struct LayerShape {
  std::string name;
  std::vector<int> weight;
  int bias;
  int fan_in;
};

std::vector<LayerShape> layer_shapes(const UNetSpec& s) {
  std::vector<LayerShape> layers;
  auto conv = [&](const std::string& name, int in, int out, int k) {
    layers.push_back({name, {out, in, k, k}, out, in * k * k});
  };
  int ch = s.in_channels;
  for (int k = 0; k < s.depth(); ++k) {
    const int w = s.encoder_widths[static_cast<std::size_t>(k)];
    conv("enc" + std::to_string(k) + ".conv1", ch, w, 3);
    conv("enc" + std::to_string(k) + ".conv2", w, w, 3);
    ch = w;
  }
  conv("bottleneck.conv1", ch, s.bottleneck_width, 3);
  conv("bottleneck.conv2", s.bottleneck_width, s.bottleneck_width, 3);
  ch = s.bottleneck_width;
  for (int k = s.depth() - 1; k >= 0; --k) {
    const int w = s.encoder_widths[static_cast<std::size_t>(k)];
    const std::string p = "dec" + std::to_string(k);
    layers.push_back({p + ".up", {ch, w, 2, 2}, w, ch * 4});
    conv(p + ".conv1", 2 * w, w, 3);
    conv(p + ".conv2", w, w, 3);
    ch = w;
  }
  conv("head", ch, s.out_channels, 1);
  return layers;
}

}  // namespace

void UNetSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || bottleneck_width <= 0) {
    throw ArgumentError("UNet channel counts must be positive");
  }
  if (encoder_widths.empty()) throw ArgumentError("UNet needs at least one encoder level");
  for (int w : encoder_widths)
    if (w <= 0) throw ArgumentError("UNet encoder widths must be positive");
  if (!(leaky_slope >= 0.0f)) throw ArgumentError("leaky slope must be non-negative");
}

void to_json(nlohmann::json& j, const UNetSpec& s) {
  j = nlohmann::json{{"in_channels", s.in_channels},         {"out_channels", s.out_channels},
                     {"encoder_widths", s.encoder_widths},   {"bottleneck_width", s.bottleneck_width},
                     {"leaky_slope", s.leaky_slope},         {"sigmoid_output", s.sigmoid_output}};
}

void from_json(const nlohmann::json& j, UNetSpec& s) {
  s.in_channels = j.value("in_channels", s.in_channels);
  s.out_channels = j.value("out_channels", s.out_channels);
  s.encoder_widths = j.value("encoder_widths", s.encoder_widths);
  s.bottleneck_width = j.value("bottleneck_width", s.bottleneck_width);
  s.leaky_slope = j.value("leaky_slope", s.leaky_slope);
  s.sigmoid_output = j.value("sigmoid_output", s.sigmoid_output);
}

UNet::UNet(UNetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  for (const auto& l : layer_shapes(spec_)) {
    params_.add_uniform(l.name + ".weight", l.weight, l.fan_in, rng);
    params_.add_uniform(l.name + ".bias", {l.bias}, l.fan_in, rng);
  }
}

UNet::UNet(UNetSpec spec, ParamSet params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  const auto layers = layer_shapes(spec_);
  if (params_.size() != 2 * layers.size()) throw ArgumentError("UNet parameter set does not match spec");
  for (const auto& l : layers) {
    if (params_.get(l.name + ".weight")->value.shape() != l.weight ||
        params_.get(l.name + ".bias")->value.shape() != std::vector<int>{l.bias}) {
      throw ShapeError("UNet parameter '" + l.name + "' has the wrong shape");
    }
  }
}

std::vector<std::string> UNet::layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layer_shapes(spec_)) names.push_back(l.name);
  return names;
}

ag::Var UNet::block(const std::string& prefix, ag::Var x) const {
  for (const char* conv : {".conv1", ".conv2"}) {
    const std::string n = prefix + conv;
    x = ag::leaky_relu(ag::conv2d(x, params_.get(n + ".weight"), params_.get(n + ".bias")), spec_.leaky_slope);
  }
  return x;
}

ag::Var UNet::forward(const ag::Var& input, std::span<const Tensor> gates, SkipMode mode) const {
  const Tensor& in = input->value;
  if (in.rank() != 3 || in.channels() != spec_.in_channels) {
    throw ShapeError("UNet: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                     shape_string(in.shape()));
  }
  const int div = 1 << spec_.depth();
  if (in.height() % div || in.width() % div) {
    throw ShapeError("UNet: spatial size " + std::to_string(in.height()) + "x" + std::to_string(in.width()) +
                     " is not divisible by " + std::to_string(div));
  }
  if (mode == SkipMode::gated && gates.size() < static_cast<std::size_t>(spec_.depth())) {
    throw ArgumentError("UNet: gated mode needs one gate per encoder level");
  }

  std::vector<ag::Var> skips;
  ag::Var x = input;
  for (int k = 0; k < spec_.depth(); ++k) {
    x = block("enc" + std::to_string(k), x);
    switch (mode) {
      case SkipMode::gated:
        skips.push_back(ag::mul_broadcast(x, ag::constant(gates[static_cast<std::size_t>(k)])));
        break;
      case SkipMode::ungated:
        skips.push_back(x);
        break;
      case SkipMode::zeroed:
        skips.push_back(ag::constant(Tensor(x->value.shape(), 0.0f)));
        break;
    }
    x = ag::max_pool2x2(x);
  }
  x = block("bottleneck", x);
  for (int k = spec_.depth() - 1; k >= 0; --k) {
    const std::string p = "dec" + std::to_string(k);
    x = ag::conv_transpose2x2(x, params_.get(p + ".up.weight"), params_.get(p + ".up.bias"));
    x = ag::concat_channels(x, skips[static_cast<std::size_t>(k)]);
    x = block(p, x);
  }
  x = ag::conv2d(x, params_.get("head.weight"), params_.get("head.bias"));
  return spec_.sigmoid_output ? ag::sigmoid(x) : x;
}

std::size_t unet_parameter_count(const UNetSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : layer_shapes(spec)) {
    std::size_t w = 1;
    for (int d : l.weight) w *= static_cast<std::size_t>(d);
    n += w + static_cast<std::size_t>(l.bias);
  }
  return n;
}

}  // namespace lowlight
