#pragma once

#include <cstdint>
#include <vector>

#include "lowlight/params.hpp"

namespace lowlight {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Holds references to the parameter tensors of
/// one ParamSet; the set must outlive the optimizer.
class Adam {
 public:
  Adam(ParamSet& params, AdamConfig config = {});

  /// Applies one update with the given learning rate using the gradients
  /// currently accumulated on the parameters; missing gradients count as 0.
  void step(double learning_rate);

  std::int64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }

  // Moment tensors in parameter order, for checkpointing.
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }
  void restore(std::int64_t steps, std::vector<Tensor> first, std::vector<Tensor> second);

 private:
  ParamSet* params_;
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace lowlight
