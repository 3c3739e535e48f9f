#include "lowlight/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lowlight/error.hpp"

namespace lowlight {

void LossWeights::validate() const {
  if (!(l1 >= 0.0) || !(ms_ssim >= 0.0) || !(text >= 0.0)) {
    throw ArgumentError("loss weights must be non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"l1", w.l1}, {"ms_ssim", w.ms_ssim}, {"text", w.text}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.l1 = j.value("l1", w.l1);
  w.ms_ssim = j.value("ms_ssim", w.ms_ssim);
  w.text = j.value("text", w.text);
}

void MsSsimParams::validate() const {
  if (scale_weights.empty()) throw ArgumentError("MS-SSIM needs at least one scale");
  const double sum = std::accumulate(scale_weights.begin(), scale_weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-6) throw ArgumentError("MS-SSIM scale weights must sum to 1");
  for (double w : scale_weights)
    if (!(w >= 0.0)) throw ArgumentError("MS-SSIM scale weights must be non-negative");
  if (window_size < 1 || window_size % 2 == 0) throw ArgumentError("MS-SSIM window size must be odd");
  if (!(window_sigma > 0.0) || !(c1 > 0.0) || !(c2 > 0.0)) throw ArgumentError("MS-SSIM constants must be positive");
}

std::vector<double> normalized_ms_ssim_weights(int m) {
  if (m < 1 || m > static_cast<int>(kPublishedMsSsimWeights.size())) {
    throw ArgumentError("MS-SSIM scale count must be in [1,5]");
  }
  std::vector<double> w(kPublishedMsSsimWeights.begin(), kPublishedMsSsimWeights.begin() + m);
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= sum;
  return w;
}

MsSsimParams MsSsimParams::with_scales(int m) {
  MsSsimParams p;
  p.scale_weights = normalized_ms_ssim_weights(m);
  return p;
}

void to_json(nlohmann::json& j, const MsSsimParams& p) {
  j = nlohmann::json{{"scale_weights", p.scale_weights},
                     {"window_size", p.window_size},
                     {"window_sigma", p.window_sigma},
                     {"c1", p.c1},
                     {"c2", p.c2}};
}

void from_json(const nlohmann::json& j, MsSsimParams& p) {
  // "scales": M is shorthand for the published weights truncated to M.
  if (j.contains("scales")) p.scale_weights = normalized_ms_ssim_weights(j.at("scales").get<int>());
  p.scale_weights = j.value("scale_weights", p.scale_weights);
  p.window_size = j.value("window_size", p.window_size);
  p.window_sigma = j.value("window_sigma", p.window_sigma);
  p.c1 = j.value("c1", p.c1);
  p.c2 = j.value("c2", p.c2);
}

namespace {

// Single-channel double-precision plane.
struct Plane {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int height, int width) : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0.0) {}
  double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-static_cast<double>((i - r) * (i - r)) / (2.0 * sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" correlation: output (h-K+1)×(w-K+1).
Plane filter_valid(const Plane& in, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = in.h - k + 1, ow = in.w - k + 1;
  Plane tmp(in.h, ow);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += g[static_cast<std::size_t>(t)] * in(y, x + t);
      tmp(y, x) = s;
    }
  Plane out(oh, ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += g[static_cast<std::size_t>(t)] * tmp(y + t, x);
      out(y, x) = s;
    }
  return out;
}

// Adjoint of filter_valid: scatters an (h-K+1)×(w-K+1) gradient back to h×w.
Plane filter_valid_adjoint(const Plane& grad, const std::vector<double>& g, int h, int w) {
  const int k = static_cast<int>(g.size());
  Plane tmp(h, grad.w);
  for (int y = 0; y < grad.h; ++y)
    for (int x = 0; x < grad.w; ++x) {
      const double v = grad(y, x);
      for (int t = 0; t < k; ++t) tmp(y + t, x) += g[static_cast<std::size_t>(t)] * v;
    }
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < grad.w; ++x) {
      const double v = tmp(y, x);
      for (int t = 0; t < k; ++t) out(y, x + t) += g[static_cast<std::size_t>(t)] * v;
    }
  return out;
}

Plane downsample(const Plane& in) {
  Plane out(in.h / 2, in.w / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out(y, x) = 0.25 * (in(2 * y, 2 * x) + in(2 * y, 2 * x + 1) + in(2 * y + 1, 2 * x) + in(2 * y + 1, 2 * x + 1));
  return out;
}

// Adds the adjoint of downsample(grad) into dst (dst has the finer size).
void upsample_add(const Plane& grad, Plane& dst) {
  for (int y = 0; y < grad.h; ++y)
    for (int x = 0; x < grad.w; ++x) {
      const double v = 0.25 * grad(y, x);
      dst(2 * y, 2 * x) += v;
      dst(2 * y, 2 * x + 1) += v;
      dst(2 * y + 1, 2 * x) += v;
      dst(2 * y + 1, 2 * x + 1) += v;
    }
}

Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.h, a.w);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

// Mean of the contrast-structure map (full_ssim = false) or of the full SSIM
// map (full_ssim = true) over valid window positions, with the gradient with
// respect to x when requested.
double ssim_term(const Plane& x, const Plane& y, const std::vector<double>& g, const MsSsimParams& p, bool full_ssim,
                 Plane* grad) {
  const Plane mx = filter_valid(x, g), my = filter_valid(y, g);
  const Plane sxx = filter_valid(multiply(x, x), g);
  const Plane syy = filter_valid(multiply(y, y), g);
  const Plane sxy = filter_valid(multiply(x, y), g);
  const std::size_t n = mx.v.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  Plane d_mu, d_sxx, d_sxy;
  if (grad) {
    d_mu = Plane(mx.h, mx.w);
    d_sxx = Plane(mx.h, mx.w);
    d_sxy = Plane(mx.h, mx.w);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = sxx.v[i] - ux * ux, vy = syy.v[i] - uy * uy, cxy = sxy.v[i] - ux * uy;
    const double a = 2.0 * cxy + p.c2, b = vx + vy + p.c2;
    const double cs = a / b;
    double l = 1.0;
    if (full_ssim) {
      const double la = 2.0 * ux * uy + p.c1, lb = ux * ux + uy * uy + p.c1;
      l = la / lb;
    }
    total += l * cs;
    if (!grad) continue;
    // Partial derivatives of this position's term.
    const double dt_dcxy = l * 2.0 / b;
    const double dt_dvx = -l * cs / b;
    double dt_dux = 0.0;
    if (full_ssim) {
      const double lb = ux * ux + uy * uy + p.c1;
      dt_dux = cs * (2.0 * uy - 2.0 * ux * l) / lb;
    }
    d_sxx.v[i] = dt_dvx * inv_n;
    d_sxy.v[i] = dt_dcxy * inv_n;
    d_mu.v[i] = (dt_dux - 2.0 * ux * dt_dvx - uy * dt_dcxy) * inv_n;
  }
  if (grad) {
    const Plane gm = filter_valid_adjoint(d_mu, g, x.h, x.w);
    const Plane gxx = filter_valid_adjoint(d_sxx, g, x.h, x.w);
    const Plane gxy = filter_valid_adjoint(d_sxy, g, x.h, x.w);
    *grad = Plane(x.h, x.w);
    for (std::size_t i = 0; i < grad->v.size(); ++i) {
      grad->v[i] = gm.v[i] + 2.0 * x.v[i] * gxx.v[i] + y.v[i] * gxy.v[i];
    }
  }
  return total * inv_n;
}

Plane channel_plane(const Tensor& t, int c) {
  Plane p(t.height(), t.width());
  const float* src = t.data() + static_cast<std::size_t>(c) * t.plane();
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = src[i];
  return p;
}

void check_ssim_inputs(const Tensor& pred, const Tensor& target, const MsSsimParams& params) {
  require_same_shape(pred, target, "ms_ssim");
  if (pred.rank() != 3) throw ShapeError("ms_ssim: expected [C,H,W] images");
  params.validate();
  const int min = params.min_size();
  if (pred.height() < min || pred.width() < min) {
    throw ShapeError("ms_ssim: " + std::to_string(params.scales()) + " scales need images of at least " +
                     std::to_string(min) + "x" + std::to_string(min) + ", got " + std::to_string(pred.height()) +
                     "x" + std::to_string(pred.width()));
  }
}

}  // namespace

double ms_ssim_with_grad(const Tensor& pred, const Tensor& target, const MsSsimParams& params, Tensor* grad) {
  check_ssim_inputs(pred, target, params);
  const auto g = gaussian_window(params.window_size, params.window_sigma);
  const int m = params.scales();
  if (grad) *grad = Tensor(pred.shape(), 0.0f);

  double total = 0.0;
  for (int c = 0; c < pred.channels(); ++c) {
    std::vector<Plane> xs{channel_plane(pred, c)}, ys{channel_plane(target, c)};
    for (int j = 1; j < m; ++j) {
      xs.push_back(downsample(xs.back()));
      ys.push_back(downsample(ys.back()));
    }
    std::vector<double> vals(static_cast<std::size_t>(m));
    std::vector<Plane> dvals(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      vals[ju] = ssim_term(xs[ju], ys[ju], g, params, j == m - 1, grad ? &dvals[ju] : nullptr);
    }
    double prod = 1.0;
    for (int j = 0; j < m; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      prod *= std::pow(std::max(vals[ju], 0.0), params.scale_weights[ju]);
    }
    total += prod;
    if (!grad) continue;

    // d prod / d vals[j], then chain through each scale back to full resolution.
    Plane acc(xs.back().h, xs.back().w);
    for (int j = m - 1; j >= 0; --j) {
      const auto ju = static_cast<std::size_t>(j);
      double coeff = 0.0;
      if (vals[ju] > 0.0) {
        coeff = params.scale_weights[ju] * std::pow(vals[ju], params.scale_weights[ju] - 1.0);
        for (int k = 0; k < m; ++k) {
          if (k == j) continue;
          coeff *= std::pow(std::max(vals[static_cast<std::size_t>(k)], 0.0),
                            params.scale_weights[static_cast<std::size_t>(k)]);
        }
      }
      for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += coeff * dvals[ju].v[i];
      if (j > 0) {
        Plane finer(xs[ju - 1].h, xs[ju - 1].w);
        upsample_add(acc, finer);
        acc = std::move(finer);
      }
    }
    float* dst = grad->data() + static_cast<std::size_t>(c) * pred.plane();
    for (std::size_t i = 0; i < acc.v.size(); ++i) dst[i] = static_cast<float>(acc.v[i] / pred.channels());
  }
  return total / pred.channels();
}

double l1_loss(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "l1_loss");
  if (pred.empty()) throw ShapeError("l1_loss: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  }
  return sum / static_cast<double>(pred.size());
}

double ms_ssim(const Image& pred, const Image& target, const MsSsimParams& params) {
  return ms_ssim_with_grad(pred, target, params, nullptr);
}

double ms_ssim_loss(const Image& pred, const Image& target, const MsSsimParams& params) {
  return 1.0 - ms_ssim(pred, target, params);
}

double ssim(const Image& pred, const Image& target, const MsSsimParams& params) {
  check_ssim_inputs(pred, target, params);
  const auto g = gaussian_window(params.window_size, params.window_sigma);
  double total = 0.0;
  for (int c = 0; c < pred.channels(); ++c) {
    total += ssim_term(channel_plane(pred, c), channel_plane(target, c), g, params, true, nullptr);
  }
  return total / pred.channels();
}

double text_detection_loss(const Image& pred, const Image& target, const RegionScoreProvider& detector) {
  return ag::text_detection_loss(ag::constant(pred), target, detector)->scalar;
}

LossBreakdown combine_losses(double l1, double ms_ssim_loss, double text, const LossWeights& weights,
                             const LossToggles& toggles) {
  weights.validate();
  LossBreakdown b;
  b.l1 = l1;
  b.ms_ssim = toggles.ms_ssim ? ms_ssim_loss : 0.0;
  b.text = toggles.text ? text : 0.0;
  b.total = weights.l1 * b.l1 + weights.ms_ssim * b.ms_ssim + weights.text * b.text;
  return b;
}

LossBreakdown total_loss(const Image& pred, const Image& target, const RegionScoreProvider* detector,
                         const LossWeights& weights, const MsSsimParams& params, const LossToggles& toggles) {
  return total_loss(ag::constant(pred), target, detector, weights, params, toggles).breakdown;
}

namespace ag {

Var l1_loss(const Var& pred, const Tensor& target) {
  require_same_shape(pred->value, target, "l1_loss");
  return mean_abs_diff(pred, constant(target));
}

Var ms_ssim_loss(const Var& pred, const Tensor& target, const MsSsimParams& params) {
  auto node = std::make_shared<Node>();
  Tensor grad;
  const double value = ms_ssim_with_grad(pred->value, target, params, pred->requires_grad ? &grad : nullptr);
  node->scalar = 1.0 - value;
  node->value = Tensor({1}, static_cast<float>(node->scalar));
  if (pred->requires_grad) {
    node->requires_grad = true;
    node->parents = {pred};
    node->backward_fn = [grad = std::move(grad)](Node& self) {
      Node& p = *self.parents[0];
      float* d = p.grad_data();
      const float s = -self.grad[0];
      for (std::size_t i = 0; i < grad.size(); ++i) d[i] += s * grad[i];
    };
  }
  return node;
}

Var text_detection_loss(const Var& pred, const Tensor& target, const RegionScoreProvider& detector) {
  require_same_shape(pred->value, target, "text_detection_loss");
  auto r_pred = region_score(pred, detector);
  auto r_target = region_score(constant(target), detector);
  if (!r_pred->value.same_shape(r_target->value)) {
    throw ContractError("text_detection_loss: detector output shapes differ between inputs");
  }
  return mean_abs_diff(r_pred, constant(r_target->value));
}

}  // namespace ag

LossTerms total_loss(const ag::Var& pred, const Image& target, const RegionScoreProvider* detector,
                     const LossWeights& weights, const MsSsimParams& params, const LossToggles& toggles) {
  weights.validate();
  std::vector<double> coeffs{weights.l1};
  std::vector<ag::Var> terms{ag::l1_loss(pred, target)};
  LossBreakdown b;
  b.l1 = terms.back()->scalar;
  if (toggles.ms_ssim) {
    terms.push_back(ag::ms_ssim_loss(pred, target, params));
    coeffs.push_back(weights.ms_ssim);
    b.ms_ssim = terms.back()->scalar;
  }
  if (toggles.text) {
    if (!detector) throw ArgumentError("total_loss: text term enabled without a detector");
    terms.push_back(ag::text_detection_loss(pred, target, *detector));
    coeffs.push_back(weights.text);
    b.text = terms.back()->scalar;
  }
  auto total = ag::weighted_sum(coeffs, terms);
  b.total = total->scalar;
  return {total, b};
}

}  // namespace lowlight
