#include <gtest/gtest.h>

#include <random>
#include <set>

#include "iretinex/metrics.hpp"
#include "iretinex/model.hpp"
#include "iretinex/rcm.hpp"

using namespace iretinex;

namespace {
Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<float>(std::move(shape), v);
}
}  // namespace

TEST(Mres, AttentionRowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto q = random_tensor({8, 8, 6}, seed), k = random_tensor({8, 8, 6}, seed + 100);
    auto a = mres_attention(q, k, Tensor<float>::scalar(0.3f));
    ASSERT_EQ(a.shape(), (Shape{6, 6}));
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += a[i * 6 + j];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Mres, OutputMixesValueChannels) {
  auto q = random_tensor({4, 4, 3}, 1), k = random_tensor({4, 4, 3}, 2), v = random_tensor({2, 2, 3}, 3);
  auto d = Tensor<float>::scalar(1.0f);
  auto a = mres_attention(q, k, d);
  auto out = mres(q, k, v, d);
  ASSERT_EQ(out.shape(), v.shape());
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += a[i * 3 + j] * v[p * 3 + j];
      EXPECT_NEAR(out[p * 3 + i], s, 1e-6);
    }
}

TEST(Mres, RejectsBadScaleAndShapes) {
  auto q = random_tensor({4, 4, 3}, 1);
  EXPECT_THROW(mres_attention(q, q, Tensor<float>::scalar(0.0f)), ContractError);
  EXPECT_THROW(mres_attention(q, random_tensor({4, 4, 2}, 2), Tensor<float>::scalar(1.0f)), DimensionError);
  EXPECT_THROW(mres(q, q, random_tensor({2, 2, 2}, 3), Tensor<float>::scalar(1.0f)), DimensionError);
}

TEST(Mres, LiveFlopsMatchClosedForm) {
  EXPECT_EQ(mres_live_flops(16, 16, 32, 2), 2621440u);
  for (std::size_t s : {1u, 2u, 3u})
    EXPECT_EQ(mres_live_flops(6, 4, 5, s), flop_audit(6, 4, 5, s).mres_flops);
}

TEST(Mres, LiveFlopsScaleLinearlyInPixels) {
  EXPECT_EQ(mres_live_flops(16, 16, 8, 2), 4 * mres_live_flops(8, 8, 8, 2));
}

TEST(RcmUnit, PreservesShapes) {
  Initializer init(0);
  auto p = RcmParams<float>::make(init, 8, 2);
  auto [l, r] = rcm_unit(random_tensor({6, 4, 8}, 1), random_tensor({6, 4, 8}, 2), p);
  EXPECT_EQ(l.shape(), (Shape{6, 4, 8}));
  EXPECT_EQ(r.shape(), (Shape{6, 4, 8}));
  EXPECT_THROW(rcm_unit(random_tensor({6, 4, 8}, 1), random_tensor({4, 4, 8}, 2), p), DimensionError);
}

TEST(Backbone, PyramidShapesFor64) {
  ArchConfig a;
  a.levels = 2;
  auto m = ModelParams<float>::make(a);
  Tensor<float> img(Shape{64, 64, 3}, 0.3f);
  NoTapeScope<float> off;
  auto r = model_forward(img, m);
  ASSERT_EQ(r.pyramid.recon.size(), 3u);
  EXPECT_EQ(r.pyramid.recon[0].shape(), (Shape{64, 64, 3}));
  EXPECT_EQ(r.pyramid.recon[1].shape(), (Shape{32, 32, 3}));
  EXPECT_EQ(r.pyramid.recon[2].shape(), (Shape{16, 16, 3}));
  EXPECT_EQ(r.pyramid.illum[1].shape(), (Shape{32, 32, a.width(1)}));
}

TEST(Backbone, RejectsIndivisibleExtent) {
  ArchConfig a;
  auto m = ModelParams<float>::make(a);
  EXPECT_THROW(model_forward(Tensor<float>(Shape{30, 32, 3}, 0.5f), m), ConfigError);
}

TEST(Backbone, WidthDoublesPerLevelUpToEightfold) {
  ArchConfig a;
  a.channels = 4;
  EXPECT_EQ(a.width(0), 4u);
  EXPECT_EQ(a.width(2), 16u);
  EXPECT_EQ(a.width(5), 32u);
}

TEST(Backbone, ParameterNamesAreUnique) {
  auto ps = ModelParams<float>::make(ArchConfig{}).parameters();
  std::set<std::string> names;
  for (const auto& p : ps) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}
