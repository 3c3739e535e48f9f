#include "lowlight/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lowlight/error.hpp"

namespace lowlight::ag {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using BackwardFn = std::function<void(Node&)>;

Var make_result(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var& v) { return v && v->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->parents.assign(inputs.begin(), inputs.end());
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require_rank3(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw ShapeError(std::string(op) + ": expected a [C,H,W] tensor, got " + shape_string(t.shape()));
}

// Rows index (channel, ky, kx); columns index output pixels.
void im2col(const Tensor& x, int k, RowMat& cols) {
  const int c_in = x.channels(), h = x.height(), w = x.width(), pad = k / 2;
  cols.resize(static_cast<Eigen::Index>(c_in) * k * k, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x_lo = std::min(w, std::max(0, -dx));
        const int x_hi = std::max(x_lo, std::min(w, w - dx));
        for (int y = 0; y < h; ++y) {
          float* dst = row + static_cast<std::ptrdiff_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill_n(dst, w, 0.0f);
            continue;
          }
          const float* src = &x.at(c, sy, 0);
          std::fill(dst, dst + x_lo, 0.0f);
          for (int xx = x_lo; xx < x_hi; ++xx) dst[xx] = src[xx + dx];
          std::fill(dst + x_hi, dst + w, 0.0f);
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, int k, Tensor& dx) {
  const int c_in = dx.channels(), h = dx.height(), w = dx.width(), pad = k / 2;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols.row((c * k + ky) * k + kx).data();
        const int dxo = kx - pad;
        const int x_lo = std::min(w, std::max(0, -dxo));
        const int x_hi = std::max(x_lo, std::min(w, w - dxo));
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const float* src = row + static_cast<std::ptrdiff_t>(y) * w;
          float* dst = &dx.at(c, sy, 0);
          for (int xx = x_lo; xx < x_hi; ++xx) dst[xx + dxo] += src[xx];
        }
      }
    }
  }
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  float* dst = grad.data();
  const float* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

float* Node::grad_data() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0f);
  return grad.data();
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var leaf(Tensor value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

Var scalar_constant(double value) {
  auto node = constant(Tensor({1}, static_cast<float>(value)));
  node->scalar = value;
  return node;
}

void backward(const Var& root) {
  if (root->value.size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Tensor({1}, 1.0f));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require_rank3(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.channels() || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_string(wv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  const int c_out = wv.dim(0), k = wv.dim(2), h = xv.height(), w = xv.width();
  if (bias->value.size() != static_cast<std::size_t>(c_out)) throw ShapeError("conv2d: bias size mismatch");
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index kdim = static_cast<Eigen::Index>(xv.channels()) * k * k;

  Tensor out = Tensor::chw(c_out, h, w);
  MapMat om(out.data(), c_out, hw);
  ConstMapMat wm(wv.data(), c_out, kdim);
  if (k == 1) {
    om.noalias() = wm * ConstMapMat(xv.data(), kdim, hw);
  } else {
    RowMat cols;
    im2col(xv, k, cols);
    om.noalias() = wm * cols;
  }
  for (int o = 0; o < c_out; ++o) om.row(o).array() += bias->value[static_cast<std::size_t>(o)];

  return make_result(std::move(out), {x, weight, bias}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    ConstMapMat g(self.grad.data(), c_out, hw);
    ConstMapMat wmat(wn.value.data(), c_out, kdim);
    if (bn.requires_grad) {
      float* db = bn.grad_data();
      for (int o = 0; o < c_out; ++o) db[o] += g.row(o).sum();
    }
    if (k == 1) {
      ConstMapMat xin(xn.value.data(), kdim, hw);
      if (wn.requires_grad) MapMat(wn.grad_data(), c_out, kdim).noalias() += g * xin.transpose();
      if (xn.requires_grad) MapMat(xn.grad_data(), kdim, hw).noalias() += wmat.transpose() * g;
      return;
    }
    RowMat cols;
    if (wn.requires_grad) {
      im2col(xn.value, k, cols);
      MapMat(wn.grad_data(), c_out, kdim).noalias() += g * cols.transpose();
    }
    if (xn.requires_grad) {
      cols.noalias() = wmat.transpose() * g;
      xn.grad_data();
      col2im_add(cols, k, xn.grad);
    }
  });
}

Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require_rank3(xv, "conv_transpose2x2");
  if (wv.rank() != 4 || wv.dim(0) != xv.channels() || wv.dim(2) != 2 || wv.dim(3) != 2) {
    throw ShapeError("conv_transpose2x2: weight " + shape_string(wv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  const int c_in = xv.channels(), c_out = wv.dim(1), h = xv.height(), w = xv.width();
  if (bias->value.size() != static_cast<std::size_t>(c_out)) {
    throw ShapeError("conv_transpose2x2: bias size mismatch");
  }
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index c4 = static_cast<Eigen::Index>(c_out) * 4;

  // Row (o*4 + a*2 + b) of taps holds the contribution to out[o, 2i+a, 2j+b].
  RowMat taps(c4, hw);
  taps.noalias() = ConstMapMat(wv.data(), c_in, c4).transpose() * ConstMapMat(xv.data(), c_in, hw);
  Tensor out = Tensor::chw(c_out, 2 * h, 2 * w);
  for (int o = 0; o < c_out; ++o) {
    const float b = bias->value[static_cast<std::size_t>(o)];
    for (int a = 0; a < 2; ++a) {
      for (int bb = 0; bb < 2; ++bb) {
        const float* row = taps.row(o * 4 + a * 2 + bb).data();
        for (int i = 0; i < h; ++i) {
          float* dst = &out.at(o, 2 * i + a, bb);
          const float* src = row + static_cast<std::ptrdiff_t>(i) * w;
          for (int j = 0; j < w; ++j) dst[2 * j] = src[j] + b;
        }
      }
    }
  }

  return make_result(std::move(out), {x, weight, bias}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    RowMat gtaps(c4, hw);
    for (int o = 0; o < c_out; ++o) {
      for (int a = 0; a < 2; ++a) {
        for (int bb = 0; bb < 2; ++bb) {
          float* row = gtaps.row(o * 4 + a * 2 + bb).data();
          for (int i = 0; i < h; ++i) {
            const float* src = &self.grad.at(o, 2 * i + a, bb);
            float* dst = row + static_cast<std::ptrdiff_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] = src[2 * j];
          }
        }
      }
    }
    if (bn.requires_grad) {
      float* db = bn.grad_data();
      for (int o = 0; o < c_out; ++o) db[o] += gtaps.middleRows(o * 4, 4).sum();
    }
    if (wn.requires_grad) {
      MapMat(wn.grad_data(), c_in, c4).noalias() += ConstMapMat(xn.value.data(), c_in, hw) * gtaps.transpose();
    }
    if (xn.requires_grad) {
      MapMat(xn.grad_data(), c_in, hw).noalias() += ConstMapMat(wn.value.data(), c_in, c4) * gtaps;
    }
  });
}

Var leaky_relu(const Var& x, float slope) {
  Tensor out = x->value;
  for (float& v : out.values()) v = v > 0.0f ? v : v * slope;
  return make_result(std::move(out), {x}, [slope](Node& self) {
    Node& xn = *self.parents[0];
    float* dx = xn.grad_data();
    const float* xv = xn.value.data();
    const float* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += xv[i] > 0.0f ? g[i] : g[i] * slope;
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (float& v : out.values()) v = 1.0f / (1.0f + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    float* dx = xn.grad_data();
    const float* y = self.value.data();
    const float* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += g[i] * y[i] * (1.0f - y[i]);
  });
}

Var max_pool2x2(const Var& x) {
  const Tensor& xv = x->value;
  require_rank3(xv, "max_pool2x2");
  if (xv.height() % 2 || xv.width() % 2) {
    throw ShapeError("max_pool2x2: odd spatial size " + shape_string(xv.shape()));
  }
  const int c_n = xv.channels(), h = xv.height() / 2, w = xv.width() / 2;
  Tensor out = Tensor::chw(c_n, h, w);
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t idx = 0;
  for (int c = 0; c < c_n; ++c) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j, ++idx) {
        float best = xv.at(c, 2 * i, 2 * j);
        std::uint32_t which = 0;
        for (std::uint32_t q = 1; q < 4; ++q) {
          const float v = xv.at(c, 2 * i + static_cast<int>(q / 2), 2 * j + static_cast<int>(q % 2));
          if (v > best) {
            best = v;
            which = q;
          }
        }
        out[idx] = best;
        argmax[idx] = which;
      }
    }
  }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax), c_n, h, w](Node& self) {
    Node& xn = *self.parents[0];
    xn.grad_data();
    std::size_t k = 0;
    for (int c = 0; c < c_n; ++c) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j, ++k) {
          const auto q = static_cast<int>(argmax[k]);
          xn.grad.at(c, 2 * i + q / 2, 2 * j + q % 2) += self.grad[k];
        }
      }
    }
  });
}

Var avg_pool2x2(const Var& x) {
  const Tensor& xv = x->value;
  require_rank3(xv, "avg_pool2x2");
  if (xv.height() % 2 || xv.width() % 2) {
    throw ShapeError("avg_pool2x2: odd spatial size " + shape_string(xv.shape()));
  }
  const int c_n = xv.channels(), h = xv.height() / 2, w = xv.width() / 2;
  Tensor out = Tensor::chw(c_n, h, w);
  for (int c = 0; c < c_n; ++c) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        out.at(c, i, j) = 0.25f * (xv.at(c, 2 * i, 2 * j) + xv.at(c, 2 * i, 2 * j + 1) +
                                   xv.at(c, 2 * i + 1, 2 * j) + xv.at(c, 2 * i + 1, 2 * j + 1));
      }
    }
  }
  return make_result(std::move(out), {x}, [c_n, h, w](Node& self) {
    Node& xn = *self.parents[0];
    xn.grad_data();
    for (int c = 0; c < c_n; ++c) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const float g = 0.25f * self.grad.at(c, i, j);
          xn.grad.at(c, 2 * i, 2 * j) += g;
          xn.grad.at(c, 2 * i, 2 * j + 1) += g;
          xn.grad.at(c, 2 * i + 1, 2 * j) += g;
          xn.grad.at(c, 2 * i + 1, 2 * j + 1) += g;
        }
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  require_rank3(av, "concat_channels");
  require_rank3(bv, "concat_channels");
  if (av.height() != bv.height() || av.width() != bv.width()) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  Tensor out = Tensor::chw(av.channels() + bv.channels(), av.height(), av.width());
  std::copy(av.values().begin(), av.values().end(), out.data());
  std::copy(bv.values().begin(), bv.values().end(), out.data() + av.size());
  const std::size_t split = av.size();
  return make_result(std::move(out), {a, b}, [split](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    const float* g = self.grad.data();
    if (an.requires_grad) {
      float* d = an.grad_data();
      for (std::size_t i = 0; i < split; ++i) d[i] += g[i];
    }
    if (bn.requires_grad) {
      float* d = bn.grad_data();
      for (std::size_t i = 0; i < bn.value.size(); ++i) d[i] += g[split + i];
    }
  });
}

Var mul_broadcast(const Var& x, const Var& gate) {
  const Tensor& xv = x->value;
  const Tensor& gv = gate->value;
  require_rank3(xv, "mul_broadcast");
  if (gv.rank() != 3 || gv.channels() != 1 || gv.height() != xv.height() || gv.width() != xv.width()) {
    throw ShapeError("mul_broadcast: gate " + shape_string(gv.shape()) + " does not match " +
                     shape_string(xv.shape()));
  }
  const std::size_t plane = xv.plane();
  Tensor out = xv;
  for (int c = 0; c < xv.channels(); ++c) {
    float* dst = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] *= gv[i];
  }
  return make_result(std::move(out), {x, gate}, [plane](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    const int channels = xn.value.channels();
    const float* g = self.grad.data();
    if (xn.requires_grad) {
      float* d = xn.grad_data();
      for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) d[c * plane + i] += g[c * plane + i] * gn.value[i];
    }
    if (gn.requires_grad) {
      float* d = gn.grad_data();
      for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) d[i] += g[c * plane + i] * xn.value[c * plane + i];
    }
  });
}

Var luma(const Var& rgb) {
  const Tensor& v = rgb->value;
  require_rank3(v, "luma");
  if (v.channels() != 3) throw ShapeError("luma: expected 3 channels, got " + shape_string(v.shape()));
  const std::size_t plane = v.plane();
  Tensor out = Tensor::chw(1, v.height(), v.width());
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = 0.299f * v[i] + 0.587f * v[plane + i] + 0.114f * v[2 * plane + i];
  }
  return make_result(std::move(out), {rgb}, [plane](Node& self) {
    Node& xn = *self.parents[0];
    float* d = xn.grad_data();
    for (std::size_t i = 0; i < plane; ++i) {
      const float g = self.grad[i];
      d[i] += 0.299f * g;
      d[plane + i] += 0.587f * g;
      d[2 * plane + i] += 0.114f * g;
    }
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mean_abs_diff");
  const std::size_t n = a->value.size();
  if (n == 0) throw ShapeError("mean_abs_diff: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += std::abs(static_cast<double>(a->value[i]) - static_cast<double>(b->value[i]));
  }
  const double mean = sum / static_cast<double>(n);
  auto result = make_result(Tensor({1}, static_cast<float>(mean)), {a, b}, [n](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    const float scale = self.grad[0] / static_cast<float>(n);
    auto sign = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
    if (an.requires_grad) {
      float* d = an.grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] += scale * sign(an.value[i] - bn.value[i]);
    }
    if (bn.requires_grad) {
      float* d = bn.grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] -= scale * sign(an.value[i] - bn.value[i]);
    }
  });
  result->scalar = mean;
  return result;
}

Var mean_squared_diff(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mean_squared_diff");
  const std::size_t n = a->value.size();
  if (n == 0) throw ShapeError("mean_squared_diff: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a->value[i]) - static_cast<double>(b->value[i]);
    sum += d * d;
  }
  const double mean = sum / static_cast<double>(n);
  auto result = make_result(Tensor({1}, static_cast<float>(mean)), {a, b}, [n](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    const float scale = 2.0f * self.grad[0] / static_cast<float>(n);
    if (an.requires_grad) {
      float* d = an.grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] += scale * (an.value[i] - bn.value[i]);
    }
    if (bn.requires_grad) {
      float* d = bn.grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] -= scale * (an.value[i] - bn.value[i]);
    }
  });
  result->scalar = mean;
  return result;
}

Var weighted_sum(std::span<const double> coeffs, std::span<const Var> terms) {
  if (coeffs.size() != terms.size()) throw ArgumentError("weighted_sum: coefficient count mismatch");
  double total = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += coeffs[i] * terms[i]->scalar;
    any = any || terms[i]->requires_grad;
  }
  auto node = std::make_shared<Node>();
  node->value = Tensor({1}, static_cast<float>(total));
  node->scalar = total;
  if (any) {
    node->requires_grad = true;
    node->parents.assign(terms.begin(), terms.end());
    std::vector<double> c(coeffs.begin(), coeffs.end());
    node->backward_fn = [c = std::move(c)](Node& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        Node& t = *self.parents[i];
        if (!t.requires_grad) continue;
        t.accumulate(Tensor({1}, static_cast<float>(c[i] * self.grad[0])));
      }
    };
  }
  return node;
}

}  // namespace lowlight::ag
