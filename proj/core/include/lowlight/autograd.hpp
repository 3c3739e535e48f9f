#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lowlight/tensor.hpp"

// Minimal reverse-mode differentiation over Tensor values. Every op records
// a backward closure only when one of its inputs requires a gradient, so
// forward passes through frozen networks build no tape.
namespace lowlight::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  /// Double-precision copy of scalar results (losses); 0 for non-scalars.
  double scalar = 0.0;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  /// Adds g into grad, allocating it on first use.
  void accumulate(const Tensor& g);
  float* grad_data();
};

Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var leaf(Tensor value);
/// Scalar result carrying a double-precision value.
Var scalar_constant(double value);

/// Seeds d(root)/d(root) = 1 and propagates through the recorded tape.
/// root must hold a single element.
void backward(const Var& root);

// Convolution weights: [out, in, k, k]; biases: [out]. Padding keeps the
// spatial size for odd k ("same" convolution, zero padding).
Var conv2d(const Var& x, const Var& weight, const Var& bias);
// Stride-2 2×2 transposed convolution; weights [in, out, 2, 2].
Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias);

Var leaky_relu(const Var& x, float slope);
Var sigmoid(const Var& x);
Var max_pool2x2(const Var& x);
Var avg_pool2x2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
/// x [C,H,W] scaled by gate [1,H,W], broadcast over channels.
Var mul_broadcast(const Var& x, const Var& gate);
/// BT.601 luma of a 3-channel image, result [1,H,W].
Var luma(const Var& rgb);

/// mean |a - b| over all elements, accumulated in double.
Var mean_abs_diff(const Var& a, const Var& b);
/// mean (a - b)^2 over all elements, accumulated in double.
Var mean_squared_diff(const Var& a, const Var& b);
/// Σ coeff_i · term_i over scalar terms, in double.
Var weighted_sum(std::span<const double> coeffs, std::span<const Var> terms);

}  // namespace lowlight::ag
