#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "lowlight/archive.hpp"
#include "lowlight/error.hpp"
#include "lowlight/optim.hpp"
#include "lowlight/params.hpp"

using namespace lowlight;
using testutil::random_image;

namespace {

// Direct zero-padded "same" convolution.
Tensor brute_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int co = w.dim(0), ci = w.dim(1), k = w.dim(2), p = k / 2;
  Tensor out = Tensor::chw(co, x.height(), x.width());
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        double s = b[o];
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = y + ky - p, sx = xx + kx - p;
              if (sy < 0 || sx < 0 || sy >= x.height() || sx >= x.width()) continue;
              s += static_cast<double>(w[((o * ci + c) * k + ky) * k + kx]) * x.at(c, sy, sx);
            }
        out.at(o, y, xx) = static_cast<float>(s);
      }
  return out;
}

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Tensor t(shape, 0.0f);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST(Tensor, ConstructorRejectsWrongCount) {
  EXPECT_THROW(Tensor({2, 2, 2}, std::vector<float>(7)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 2, 2}, std::vector<float>(8)));
}

TEST(Autograd, ConvMatchesBruteForce) {
  for (int k : {1, 3}) {
    const Tensor x = random_tensor({3, 5, 7}, 1);
    const Tensor w = random_tensor({4, 3, k, k}, 2);
    const Tensor b = random_tensor({4}, 3);
    const Tensor got = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b))->value;
    const Tensor want = brute_conv(x, w, b);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << "k=" << k;
  }
}

TEST(Autograd, ConvOnTinyImageWiderThanKernel) {
  // 1-pixel-wide input with a 3×3 kernel: padding exceeds the width.
  const Tensor x = random_tensor({2, 3, 1}, 4);
  const Tensor w = random_tensor({2, 2, 3, 3}, 5);
  const Tensor b = random_tensor({2}, 6);
  const Tensor got = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b))->value;
  const Tensor want = brute_conv(x, w, b);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
}

TEST(Autograd, ConvGradients) {
  const Tensor x = random_tensor({2, 6, 5}, 7);
  const Tensor w = random_tensor({3, 2, 3, 3}, 8);
  const Tensor b = random_tensor({3}, 9);
  const Tensor target = random_tensor({3, 6, 5}, 10);
  auto wrt_x = testutil::check_gradient(
      x, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::conv2d(v, ag::constant(w), ag::constant(b)), ag::constant(target)); },
      1e-2f);
  EXPECT_LT(wrt_x.rel_error, 1e-3);
  auto wrt_w = testutil::check_gradient(
      w, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::conv2d(ag::constant(x), v, ag::constant(b)), ag::constant(target)); },
      1e-2f);
  EXPECT_LT(wrt_w.rel_error, 1e-3);
  auto wrt_b = testutil::check_gradient(
      b, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::conv2d(ag::constant(x), ag::constant(w), v), ag::constant(target)); },
      1e-2f);
  EXPECT_LT(wrt_b.rel_error, 1e-3);
}

TEST(Autograd, TransposedConvScattersEachInputPixel) {
  Tensor x({1, 1, 1}, 2.0f);
  const Tensor w({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const Tensor b({1}, 0.5f);
  const Tensor y = ag::conv_transpose2x2(ag::constant(x), ag::constant(w), ag::constant(b))->value;
  ASSERT_EQ(y.height(), 2);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0), 2.5f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1), 4.5f);
  EXPECT_FLOAT_EQ(y.at(0, 1, 0), 6.5f);
  EXPECT_FLOAT_EQ(y.at(0, 1, 1), 8.5f);
}

TEST(Autograd, TransposedConvGradients) {
  const Tensor x = random_tensor({3, 3, 4}, 11);
  const Tensor w = random_tensor({3, 2, 2, 2}, 12);
  const Tensor b = random_tensor({2}, 13);
  const Tensor target = random_tensor({2, 6, 8}, 14);
  auto f = [&](const ag::Var& xv, const ag::Var& wv) {
    return ag::mean_squared_diff(ag::conv_transpose2x2(xv, wv, ag::constant(b)), ag::constant(target));
  };
  EXPECT_LT(testutil::check_gradient(x, [&](const ag::Var& v) { return f(v, ag::constant(w)); }, 1e-2f).rel_error, 1e-3);
  EXPECT_LT(testutil::check_gradient(w, [&](const ag::Var& v) { return f(ag::constant(x), v); }, 1e-2f).rel_error, 1e-3);
}

TEST(Autograd, PoolingAndActivationGradients) {
  const Tensor x = random_tensor({2, 4, 6}, 15);
  const Tensor t2 = random_tensor({2, 2, 3}, 16);
  const Tensor t1 = random_tensor({2, 4, 6}, 17);
  EXPECT_LT(testutil::check_gradient(
                x, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::avg_pool2x2(v), ag::constant(t2)); }, 1e-2f)
                .rel_error,
            1e-3);
  EXPECT_LT(testutil::check_gradient(
                x, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::max_pool2x2(v), ag::constant(t2)); }, 1e-3f)
                .rel_error,
            1e-3);
  EXPECT_LT(testutil::check_gradient(
                x, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::sigmoid(v), ag::constant(t1)); }, 1e-2f)
                .rel_error,
            1e-3);
  Tensor off_kink = x;  // keep the probe away from the kink at 0
  for (auto& v : off_kink.values()) v += v < 0.0f ? -0.05f : 0.05f;
  EXPECT_LT(testutil::check_gradient(
                off_kink, [&](const ag::Var& v) { return ag::mean_squared_diff(ag::leaky_relu(v, 0.2f), ag::constant(t1)); },
                1e-3f)
                .rel_error,
            1e-3);
}

TEST(Autograd, MaxPoolEnumeratesBlocks) {
  const Tensor x = random_tensor({2, 4, 6}, 18);
  const Tensor y = ag::max_pool2x2(ag::constant(x))->value;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) {
        float m = -1e9f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.at(c, 2 * i + dy, 2 * j + dx));
        EXPECT_EQ(y.at(c, i, j), m);
      }
}

TEST(Autograd, GateAndConcatGradients) {
  const Tensor x = random_tensor({3, 4, 4}, 19);
  const Tensor g = random_tensor({1, 4, 4}, 20);
  const Tensor t = random_tensor({6, 4, 4}, 21);
  auto f = [&](const ag::Var& xv, const ag::Var& gv) {
    auto gated = ag::mul_broadcast(xv, gv);
    return ag::mean_squared_diff(ag::concat_channels(gated, xv), ag::constant(t));
  };
  EXPECT_LT(testutil::check_gradient(x, [&](const ag::Var& v) { return f(v, ag::constant(g)); }, 1e-2f).rel_error, 1e-3);
  EXPECT_LT(testutil::check_gradient(g, [&](const ag::Var& v) { return f(ag::constant(x), v); }, 1e-2f).rel_error, 1e-3);
}

TEST(Autograd, ConstantsBuildNoTape) {
  auto y = ag::conv2d(ag::constant(random_tensor({1, 3, 3}, 1)), ag::constant(random_tensor({1, 1, 3, 3}, 2)),
                      ag::constant(Tensor({1}, 0.0f)));
  EXPECT_FALSE(y->requires_grad);
  EXPECT_TRUE(y->parents.empty());
}

TEST(Params, CloneIsDeep) {
  std::mt19937_64 rng(1);
  ParamSet p;
  p.add_uniform("w", {2, 2}, 4, rng);
  ParamSet q = p.clone();
  q.get("w")->value[0] = 42.0f;
  EXPECT_NE(p.get("w")->value[0], 42.0f);
}

TEST(Params, UniformInitBounds) {
  std::mt19937_64 rng(7);
  ParamSet p;
  const auto& w = p.add_uniform("w", {64, 9}, 9, rng);
  for (float v : w->value.values()) EXPECT_LE(std::abs(v), 1.0f / 3.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr·g/(|g|+eps) ≈ lr·sign(g).
  ParamSet p;
  auto v = p.add("x", Tensor({2}, std::vector<float>{1.0f, -1.0f}));
  v->grad = Tensor({2}, std::vector<float>{0.5f, -3.0f});
  Adam adam(p);
  adam.step(0.1);
  EXPECT_NEAR(v->value[0], 0.9f, 1e-6);
  EXPECT_NEAR(v->value[1], -0.9f, 1e-6);
}

TEST(Adam, SkipsFrozenParameters) {
  ParamSet p;
  auto v = p.add("x", Tensor({1}, 1.0f));
  v->grad = Tensor({1}, 1.0f);
  p.set_trainable(false);
  Adam adam(p);
  adam.step(0.1);
  EXPECT_EQ(v->value[0], 1.0f);
}

TEST(Archive, RoundTripIsByteIdentical) {
  Archive a;
  a.meta = {{"kind", "test"}, {"n", 3}};
  a.add("x", random_tensor({2, 3, 4}, 3));
  a.add("y", Tensor({1}, 0.25f));
  const auto bytes = a.to_bytes();
  const Archive b = Archive::from_bytes(bytes);
  EXPECT_EQ(b.to_bytes(), bytes);
  EXPECT_EQ(b.tensor("x"), a.tensor("x"));
  EXPECT_EQ(b.meta["n"], 3);
}

TEST(Archive, RejectsOtherVersionsAndGarbage) {
  Archive a;
  auto bytes = a.to_bytes();
  auto bumped = bytes;
  bumped[4] = 9;  // version field follows the magic
  EXPECT_THROW(Archive::from_bytes(bumped), VersionError);
  EXPECT_THROW(Archive::from_bytes("abc"), FormatError);
  EXPECT_THROW(Archive::from_bytes(bytes.substr(0, bytes.size() - 1) + "xx"), FormatError);
}
