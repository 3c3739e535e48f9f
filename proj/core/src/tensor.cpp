#include "lowlight/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "lowlight/error.hpp"

namespace lowlight {
namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::channel(int c) const {
  if (rank() != 3 || c < 0 || c >= channels()) throw ShapeError("channel index out of range");
  Tensor out = Tensor::chw(1, height(), width());
  const std::size_t n = plane();
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(c * n), n, out.data());
  return out;
}

Tensor Tensor::reshaped(std::vector<int> shape) const { return Tensor(std::move(shape), std::vector<float>(data_.begin(), data_.end())); }

float Tensor::min() const { return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end()); }
float Tensor::max() const { return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end()); }

double Tensor::mean() const {
  if (data_.empty()) return 0.0;
  double s = 0.0;
  for (float v : data_) s += v;
  return s / static_cast<double>(data_.size());
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tensor clamped(const Tensor& t, float lo, float hi) {
  Tensor out = t;
  for (float& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

}  // namespace lowlight
