#include "lowlight/optim.hpp"

#include <cmath>

#include "lowlight/error.hpp"

namespace lowlight {

Adam::Adam(ParamSet& params, AdamConfig config) : params_(&params), config_(config) {
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw ArgumentError("Adam moment parameters must lie in [0,1)");
  }
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.var->value.shape(), 0.0f);
    v_.emplace_back(e.var->value.shape(), 0.0f);
  }
}

void Adam::step(double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(config_.beta1);
  const float b2 = static_cast<float>(config_.beta2);
  const float step_size = static_cast<float>(learning_rate / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(config_.epsilon);

  auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ag::Node& p = *entries[i].var;
    if (!p.requires_grad) continue;
    float* value = p.value.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const bool has_grad = !p.grad.empty();
    const float* g = has_grad ? p.grad.data() : nullptr;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const float gk = has_grad ? g[k] : 0.0f;
      m[k] = b1 * m[k] + (1.0f - b1) * gk;
      v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
      value[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

void Adam::restore(std::int64_t steps, std::vector<Tensor> first, std::vector<Tensor> second) {
  if (first.size() != m_.size() || second.size() != v_.size()) {
    throw ArgumentError("Adam state does not match the parameter set");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (!first[i].same_shape(m_[i]) || !second[i].same_shape(v_[i])) {
      throw ShapeError("Adam state shape mismatch for parameter " + std::to_string(i));
    }
  }
  t_ = steps;
  m_ = std::move(first);
  v_ = std::move(second);
}

}  // namespace lowlight
