#pragma once
// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <functional>
#include <ostream>
#include <random>
#include <string>

#include "lowlight/autograd.hpp"
#include "lowlight/tensor.hpp"

namespace lowlight {
// Readable gtest failure output.
inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << shape_string(t.shape()) << " [";
  for (std::size_t i = 0; i < std::min<std::size_t>(t.size(), 6); ++i) *os << (i ? ", " : "") << t[i];
  *os << (t.size() > 6 ? ", ...]" : "]");
}
}  // namespace lowlight

namespace testutil {

using lowlight::Tensor;

inline Tensor random_image(int c, int h, int w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t = Tensor::chw(c, h, w);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Values quantized to k/255 so PNG round trips are exact.
inline Tensor quantized_image(int c, int h, int w, std::uint64_t seed) {
  Tensor t = random_image(c, h, w, seed);
  for (auto& v : t.values()) v = std::round(v * 255.0f) / 255.0f;
  return t;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lowlight_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Owning copy of the elements (safe on temporaries in range-for).
inline std::vector<float> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

struct GradCheck {
  double rel_error = 0.0;  // ||g_a - g_n|| / max(||g_a||, ||g_n||)
  double analytic_norm = 0.0;
};

/// Central differences of a scalar loss w.r.t. every element of x, compared
/// against the autograd gradient. The step actually taken is measured after
/// float rounding, so the quotient is the true secant slope.
inline GradCheck check_gradient(const Tensor& x, const std::function<lowlight::ag::Var(const lowlight::ag::Var&)>& loss,
                                float h) {
  auto leaf = lowlight::ag::leaf(x);
  auto out = loss(leaf);
  lowlight::ag::backward(out);
  const Tensor analytic = leaf->grad;

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    const float up = orig + h, down = orig - h;
    probe[i] = up;
    const double fu = loss(lowlight::ag::constant(probe))->scalar;
    probe[i] = down;
    const double fd = loss(lowlight::ag::constant(probe))->scalar;
    probe[i] = orig;
    const double numeric = (fu - fd) / (static_cast<double>(up) - static_cast<double>(down));
    const double a = analytic.empty() ? 0.0 : analytic[i];
    diff2 += (a - numeric) * (a - numeric);
    a2 += a * a;
    n2 += numeric * numeric;
  }
  const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
  return {denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom, std::sqrt(a2)};
}

}  // namespace testutil
