#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "iretinex/gradcheck.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/tensor.hpp"

using namespace iretinex;

namespace {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool param = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = T(u(rng));
  return param ? Tensor<T>::parameter(std::move(shape), v) : Tensor<T>(std::move(shape), v);
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Gradient of ⟨f(x), y⟩ with respect to x, i.e. the adjoint applied to y.
template <typename F>
Tensor<double> adjoint_apply(F f, const Tensor<double>& x0, const Tensor<double>& y) {
  auto x = Tensor<double>::parameter(x0.shape(), std::vector<double>(x0.data().begin(), x0.data().end()));
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = sum(mul(f(x), y));
  }
  tape.backward(loss);
  return Tensor<double>(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()));
}

}  // namespace

TEST(Elementwise, GeluAtZeroIsZero) {
  EXPECT_EQ(gelu(Tensor<double>::scalar(0.0)).item(), 0.0);
}

TEST(Elementwise, DivEpsGuardsZeroDenominator) {
  auto r = div_eps(Tensor<double>::scalar(1.0), Tensor<double>::scalar(0.0));
  EXPECT_NEAR(r.item(), 1e4, 1e-9);
}

TEST(Elementwise, L1OfIdenticalTensorsIsZero) {
  auto x = random_tensor({4, 4, 3}, 1);
  EXPECT_EQ(l1(x, x).item(), 0.0);
}

TEST(Elementwise, ChannelBroadcastMatchesExplicitLoop) {
  auto a = random_tensor({2, 3, 1}, 2), b = random_tensor({2, 3, 4}, 3);
  auto r = mul(a, b);
  ASSERT_EQ(r.shape(), (Shape{2, 3, 4}));
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r[p * 4 + c], a[p] * b[p * 4 + c]);
}

TEST(Elementwise, IncompatibleShapesThrow) {
  auto a = random_tensor({2, 3, 2}, 1), b = random_tensor({2, 3, 3}, 2), c = random_tensor({3, 2, 3}, 3);
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mul(b, c), DimensionError);
}

TEST(Reductions, MaxChannelsPicksMaximum) {
  Tensor<double> x(Shape{1, 2, 3}, std::vector<double>{0.1, 0.7, 0.3, -1.0, -2.0, -0.5});
  auto m = max_channels(x);
  EXPECT_EQ(m[0], 0.7);
  EXPECT_EQ(m[1], -0.5);
}

TEST(Softmax, SlicesSumToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = random_tensor<float>({3, 4, 5}, seed, -30.0, 30.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      const auto& s = x.shape();
      std::size_t outer = 1, inner = 1;
      for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
      for (std::size_t i = axis + 1; i < 3; ++i) inner *= s[i];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          double z = 0.0;
          for (std::size_t k = 0; k < s[axis]; ++k) z += y[(o * s[axis] + k) * inner + in];
          EXPECT_NEAR(z, 1.0, 1e-6);
        }
    }
  }
}

TEST(Softmax, BadAxisThrows) { EXPECT_THROW(softmax(random_tensor({2, 2}, 0), 2), IndexError); }

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor({2, 3, 4}, 5, -1, 1, true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> s(tape);
    loss = sum(x);
  }
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  auto x = Tensor<double>::parameter(Shape{2}, {1.0, 2.0});
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> s(tape);
    loss = sum(mul(x, x));
  }
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = random_tensor({2, 2}, 1, -1, 1, true);
  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> s(tape);
    y = scale(x, 2.0);
  }
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, ReplayIsBitIdentical) {
  auto x = random_tensor({5, 5, 4}, 9, -1, 1, true);
  auto w = random_tensor({3, 3, 4, 4}, 10, -1, 1, true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> s(tape);
    loss = sum(gelu(conv2d(x, w)));
  }
  tape.backward(loss);
  std::vector<double> first(w.grad().begin(), w.grad().end());
  w.zero_grad();
  x.zero_grad();
  tape.backward(loss);
  std::vector<double> second(w.grad().begin(), w.grad().end());
  EXPECT_EQ(first, second);
  EXPECT_TRUE(tape.is_topologically_ordered());
}

TEST(GradCheck, SumIsExact) {
  // Dyadic inputs and a power-of-two step keep every difference exact.
  auto x = Tensor<double>::parameter(Shape{3, 3}, {0.5, -0.25, 0.75, 1.0, -1.0, 0.125, 0.0, 2.0, -0.5});
  EXPECT_EQ(grad_check<double>([](const Tensor<double>& t) { return sum(t); }, x, 0x1p-13), 0.0);
  // With a generic step only rounding remains.
  auto y = random_tensor({3, 3}, 4, -1, 1, true);
  EXPECT_LT(grad_check<double>([](const Tensor<double>& t) { return sum(t); }, y), 1e-10);
}

TEST(GradCheck, SoftmaxThenSumIsFlat) {
  // The analytic gradient is ~0, so the relative form only measures rounding
  // noise over the 1e-8 floor; the absolute deviation is the meaningful check.
  auto x = random_tensor({4, 5}, 6, -1, 1, true);
  const auto r = grad_check_all<double>([&] { return sum(softmax(x, 1)); }, {x});
  EXPECT_LE(r.max_absolute_error, 1e-10);
  EXPECT_EQ(r.probes, 20u);
}

TEST(GradCheck, NonFiniteLossThrows) {
  auto x = Tensor<double>::parameter(Shape{1}, {0.0});
  EXPECT_THROW(grad_check<double>([](const Tensor<double>& t) { return div_scalar(t, t); }, x), Error);
}

TEST(Matmul, FlopCounterIsTwoMKN) {
  auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 5}, 2), c = random_tensor({3, 7}, 3);
  FlopCounter counter;
  {
    FlopScope scope(counter);
    (void)matmul(a, b);
    EXPECT_EQ(counter.matmul_flops(), 2u * 3 * 4 * 5);
    (void)matmul_tn(a, c);  // 4×3 · 3×7
    EXPECT_EQ(counter.matmul_flops(), 2u * 3 * 4 * 5 + 2u * 4 * 3 * 7);
  }
  EXPECT_EQ(counter.matmul_calls(), 2u);
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  auto a = random_tensor({6, 3}, 1), b = random_tensor({6, 4}, 2), c = random_tensor({5, 3}, 3);
  auto tn = matmul_tn(a, b), ref_tn = matmul(transpose(a), b);
  auto nt = matmul_nt(a, c), ref_nt = matmul(a, transpose(c));
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn[i], ref_tn[i], 1e-12);
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref_nt[i], 1e-12);
}

TEST(Conv, DirectMatchesIm2col) {
  for (std::size_t k : {3u, 5u}) {
    auto x = random_tensor({7, 6, 8}, k), w = random_tensor({k, k, 8, 5}, k + 1), b = random_tensor({5}, k + 2);
    auto d = conv2d(x, w, b, 1, ConvAlgo::direct), i = conv2d(x, w, b, 1, ConvAlgo::im2col);
    ASSERT_EQ(d.shape(), i.shape());
    for (std::size_t n = 0; n < d.size(); ++n) EXPECT_NEAR(d[n], i[n], 1e-12);
  }
}

TEST(Conv, DirectRejectsStridedKernels) {
  auto x = random_tensor({6, 6, 4}, 1), w = random_tensor({4, 4, 4, 4}, 2);
  EXPECT_THROW(conv2d(x, w, Tensor<double>{}, 2, ConvAlgo::direct), ParameterError);
}

TEST(Conv, SamePaddingShapes) {
  auto x = random_tensor({7, 6, 2}, 1);
  EXPECT_EQ(conv2d(x, random_tensor({3, 3, 2, 4}, 2)).shape(), (Shape{7, 6, 4}));
  EXPECT_EQ(conv2d(x, random_tensor({4, 4, 2, 4}, 2), {}, 2).shape(), (Shape{4, 3, 4}));
  EXPECT_EQ(deconv2d(x, random_tensor({2, 2, 2, 3}, 3), {}, 2).shape(), (Shape{14, 12, 3}));
}

TEST(Conv, IdentityKernelIsIdentity) {
  auto x = random_tensor({5, 5, 3}, 8);
  Tensor<double> w(Shape{3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.data()[((1 * 3 + 1) * 3 + c) * 3 + c] = 1.0;
  auto y = conv2d(x, w);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv, ConvAdjointIdentity) {
  for (std::size_t stride : {1u, 2u}) {
    const std::size_t k = stride == 1 ? 3 : 4;
    auto x = random_tensor({6, 6, 3}, 20 + stride), w = random_tensor({k, k, 3, 2}, 30 + stride);
    auto fx = conv2d(x, w, {}, stride);
    auto y = random_tensor(fx.shape(), 40 + stride);
    auto aty = adjoint_apply([&](const Tensor<double>& t) { return conv2d(t, w, {}, stride); }, x, y);
    EXPECT_NEAR(dot(fx, y), dot(x, aty), 1e-6);
  }
}

TEST(Conv, DeconvIsAdjointOfStridedConv) {
  const std::size_t cin = 3, cout = 2, k = 4, s = 2;
  auto x = random_tensor({3, 4, cin}, 50), w = random_tensor({cin, k, k, cout}, 51);
  auto dx = deconv2d(x, w, {}, s);
  auto y = random_tensor(dx.shape(), 52);
  Tensor<double> wt(Shape{k, k, cout, cin});
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx)
        for (std::size_t co = 0; co < cout; ++co)
          wt.data()[((ky * k + kx) * cout + co) * cin + ci] = w[((ci * k + ky) * k + kx) * cout + co];
  EXPECT_NEAR(dot(dx, y), dot(x, conv2d(y, wt, {}, s)), 1e-6);
  auto aty = adjoint_apply([&](const Tensor<double>& t) { return deconv2d(t, w, {}, s); }, x, y);
  EXPECT_NEAR(dot(dx, y), dot(x, aty), 1e-6);
}

TEST(Conv, DepthwiseMatchesPerChannelConv) {
  auto x = random_tensor({5, 6, 3}, 60), w = random_tensor({3, 3, 3}, 61), b = random_tensor({3}, 62);
  Tensor<double> full(Shape{3, 3, 3, 3});
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t c = 0; c < 3; ++c) full.data()[(t * 3 + c) * 3 + c] = w[t * 3 + c];
  auto d = depthwise_conv2d(x, w, b), ref = conv2d(x, full, b, 1, ConvAlgo::im2col);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], ref[i], 1e-12);
}

TEST(LayerNorm, NormalizesEachPosition) {
  auto x = random_tensor({3, 3, 6}, 70, -4, 4);
  Tensor<double> g(Shape{6}, 1.0), b(Shape{6}, 0.0);
  auto y = layer_norm(x, g, b);
  for (std::size_t p = 0; p < 9; ++p) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 6; ++c) m += y[p * 6 + c];
    m /= 6;
    for (std::size_t c = 0; c < 6; ++c) v += (y[p * 6 + c] - m) * (y[p * 6 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 6, 1.0, 1e-3);
  }
}

TEST(Tape, NoTapeScopeRecordsNothing) {
  auto x = random_tensor({2, 2}, 1, -1, 1, true);
  Tape<double> tape;
  TapeScope<double> s(tape);
  {
    NoTapeScope<double> off;
    (void)gelu(x);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)gelu(x);
  EXPECT_EQ(tape.size(), 1u);
}
