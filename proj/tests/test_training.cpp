#include <gtest/gtest.h>

#include <cmath>

#include "iretinex/dataset.hpp"
#include "iretinex/degrade.hpp"
#include "iretinex/fpenv.hpp"
#include "iretinex/optim.hpp"
#include "iretinex/training.hpp"

using namespace iretinex;

namespace {

DegradeConfig fixed(double alpha, double gamma, double sigma, bool poisson) {
  DegradeConfig c;
  c.alpha_min = c.alpha_max = alpha;
  c.gamma_min = c.gamma_max = gamma;
  c.sigma_min = c.sigma_max = sigma;
  c.poisson = poisson;
  return c;
}

/// Image whose every pixel has a distinct value, so any transform is visible.
ImageRGB marked(std::size_t h, std::size_t w) {
  ImageRGB img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = float(i) / float(img.size());
  return img;
}

}  // namespace

// ---------------------------------------------------------------------------
// Degradation

TEST(Degrade, PowerLawClosedForm) {
  ImageRGB clean(1, 1, 0.25f);
  Rng rng(0);
  auto low = synth_lowlight(clean, fixed(1.0, 2.0, 0.0, false), rng);
  for (float v : low.pixels()) EXPECT_EQ(v, 0.0625f);
}

TEST(Degrade, IdentityDegradationIsExact) {
  const auto clean = procedural_texture(2, 16, 16);
  Rng rng(0);
  EXPECT_EQ(synth_lowlight(clean, fixed(1.0, 1.0, 0.0, false), rng), clean);
}

TEST(Degrade, FixedSeedIsBitIdentical) {
  const auto clean = procedural_texture(5, 16, 16);
  DegradeConfig cfg;
  Rng r1(42), r2(42);
  EXPECT_EQ(synth_lowlight(clean, cfg, r1), synth_lowlight(clean, cfg, r2));
}

TEST(Degrade, OutputStaysInUnitRange) {
  const auto clean = procedural_texture(3, 32, 32);
  DegradeConfig cfg;
  cfg.sigma_min = cfg.sigma_max = 0.3;
  Rng rng(1);
  const auto low = synth_lowlight(clean, cfg, rng);
  for (float v : low.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Degrade, InvalidConfigsThrow) {
  Rng rng(0);
  ImageRGB clean(2, 2, 0.5f);
  EXPECT_THROW(synth_lowlight(clean, fixed(1.0, 0.0, 0.0, false), rng), ConfigError);
  EXPECT_THROW(synth_lowlight(clean, fixed(1.0, -1.0, 0.0, false), rng), ConfigError);
  EXPECT_THROW(synth_lowlight(clean, fixed(1.0, 1.0, -0.1, false), rng), ConfigError);
  EXPECT_THROW(synth_lowlight(clean, fixed(1.5, 1.0, 0.0, false), rng), ConfigError);
  EXPECT_THROW(apply_degradation(clean, DegradeDraw{1.0, 0.0, 0.0}, false, 1.0, rng), ConfigError);
}

TEST(Degrade, NamedPresets) {
  EXPECT_EQ(DegradeConfig::preset("bright").gamma_min, 0.7);
  EXPECT_EQ(DegradeConfig::preset("moderate").gamma_min, 1.2);
  EXPECT_EQ(DegradeConfig::preset("dark").gamma_max, 1.5);
  EXPECT_THROW(DegradeConfig::preset("dim"), ConfigError);
}

TEST(Degrade, ShotNoiseVarianceTracksSignal) {
  ImageRGB clean(64, 64, 0.5f);
  auto cfg = fixed(1.0, 1.0, 0.0, true);
  cfg.poisson_scale = 100.0;
  Rng rng(3);
  auto low = synth_lowlight(clean, cfg, rng);
  double m = 0, v = 0;
  for (float x : low.pixels()) m += x;
  m /= double(low.size());
  for (float x : low.pixels()) v += (x - m) * (x - m);
  v /= double(low.size());
  EXPECT_NEAR(m, 0.5, 0.01);
  EXPECT_NEAR(v, 0.5 / 100.0, 0.0005);
}

// ---------------------------------------------------------------------------
// Data and augmentation

TEST(Dataset, BundledTexturesAreDistinctAndCoverEveryFamily) {
  const auto tex = bundled_textures(16);
  ASSERT_EQ(tex.size(), 16u);
  for (std::size_t i = 0; i < tex.size(); ++i) {
    EXPECT_EQ(tex[i].height(), 64u);
    for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(tex[i] == tex[j]) << i << " vs " << j;
  }
  for (std::size_t f = 0; f < kTextureFamilies; ++f) EXPECT_STRNE(texture_family_name(f), "");
}

TEST(Dataset, TexturesAreDeterministic) {
  EXPECT_EQ(procedural_texture(7, 32, 32, 5), procedural_texture(7, 32, 32, 5));
  EXPECT_FALSE(procedural_texture(7, 32, 32, 5) == procedural_texture(7, 32, 32, 6));
}

TEST(Dataset, TexturesHaveStructure) {
  for (const auto& t : bundled_textures(16, 32)) {
    double m = 0, v = 0;
    for (float x : t.pixels()) m += x;
    m /= double(t.size());
    for (float x : t.pixels()) v += (x - m) * (x - m);
    EXPECT_GT(v / double(t.size()), 1e-4);
  }
}

TEST(Augment, IdentityElement) {
  const auto img = marked(4, 4);
  EXPECT_EQ(apply(Dihedral{0, false}, img), img);
}

TEST(Augment, FourQuarterTurnsAreIdentity) {
  const auto img = marked(5, 5);
  auto r = img;
  for (int i = 0; i < 4; ++i) r = rotate90(r);
  EXPECT_EQ(r, img);
  EXPECT_FALSE(rotate90(img) == img);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
}

TEST(Augment, BothMembersGetTheSameTransform) {
  const auto img = marked(6, 6);
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    Rng rng(seed);
    const ImagePair out = augment({img, img}, rng);
    EXPECT_EQ(out.low, out.clean);
    bool found = false;
    for (unsigned q = 0; q < 4; ++q)
      for (bool f : {false, true}) found = found || apply(Dihedral{q, f}, img) == out.low;
    EXPECT_TRUE(found);
  }
}

TEST(Augment, NonSquareRotationThrows) {
  const auto img = marked(4, 6);
  Rng rng(0);
  EXPECT_THROW(augment({img, img}, rng), ConfigError);
  EXPECT_NO_THROW(augment({img, img}, rng, AugmentConfig{false, true}));
}

TEST(Augment, RandomCropIsAligned) {
  const auto img = marked(10, 12);
  Rng rng(2);
  auto p = random_crop({img, img}, 4, rng);
  EXPECT_EQ(p.low, p.clean);
  EXPECT_EQ(p.low.height(), 4u);
  EXPECT_THROW(random_crop({img, img}, 11, rng), ConfigError);
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_EQ(cosine_lr(0, 2000, 2e-4, 1e-6), 2e-4);
  EXPECT_EQ(cosine_lr(2000, 2000, 2e-4, 1e-6), 1e-6);
  EXPECT_NEAR(cosine_lr(1000, 2000, 2e-4, 1e-6), 1.005e-4, 1e-12);
  EXPECT_EQ(cosine_lr(5000, 2000, 2e-4, 1e-6), 1e-6);
}

TEST(CosineLr, NonIncreasing) {
  const std::size_t T = 999;
  double prev = cosine_lr(0, T, 2e-4, 1e-6);
  for (std::size_t t = 1; t <= T; ++t) {
    const double lr = cosine_lr(t, T, 2e-4, 1e-6);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet<double> ps;
  auto w = Tensor<double>::parameter(Shape{5}, {0.0, 1.0, -2.0, 3.0, 0.5});
  ps.add("w", w);
  const std::vector<double> g{1e-3, -0.5, 2.0, -1e-3, 100.0}, before(w.data().begin(), w.data().end());
  w.zero_grad();
  std::copy(g.begin(), g.end(), w.grad().begin());
  AdamState st;
  const double lr = 1e-3;
  adam_step(ps, st, lr);
  const double eps = AdamConfig{}.eps;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double dw = w.data()[i] - before[i];
    // closed form lr·|g|/(|g| + ε)
    EXPECT_NEAR(std::abs(dw), lr * std::abs(g[i]) / (std::abs(g[i]) + eps), 1e-12 * lr) << "g = " << g[i];
    // ≈ lr: the ε term alone contributes lr·ε/|g|, below 1e-6·lr once |g| ≥ 1e-2
    if (std::abs(g[i]) >= 1e-2) {
      EXPECT_NEAR(std::abs(dw), lr, 1e-6 * lr) << "g = " << g[i];
    }
    EXPECT_LT(dw * g[i], 0.0);
  }
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamSet<double> ps;
  auto w = Tensor<double>::parameter(Shape{3}, {0.1, 0.2, 0.3});
  ps.add("w", w);
  w.zero_grad();
  AdamState st;
  for (int i = 0; i < 3; ++i) adam_step(ps, st, 1e-2);
  EXPECT_EQ(w[0], 0.1);
  EXPECT_EQ(w[2], 0.3);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamSet<double> ps;
  auto a = Tensor<double>::parameter(Shape{2}, {0.0, 0.0});
  auto b = Tensor<double>::parameter(Shape{2}, {0.0, 0.0});
  ps.add("first", a);
  ps.add("second.weight", b);
  a.zero_grad();
  b.zero_grad();
  b.grad()[1] = NAN;
  AdamState st;
  try {
    adam_step(ps, st, 1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("second.weight"), std::string::npos);
  }
  EXPECT_EQ(a[0], 0.0);  // nothing applied
}

TEST(Adam, LowerBoundIsEnforced) {
  ParamSet<double> ps;
  auto d = Tensor<double>::parameter(Shape{1}, {1.5e-3});
  ps.add("scale", d, 1e-3);
  d.zero_grad();
  d.grad()[0] = 1.0;
  AdamState st;
  adam_step(ps, st, 0.1);
  EXPECT_EQ(d[0], 1e-3);
}

TEST(Adam, DeterministicOverTenSteps) {
  auto run = [] {
    ParamSet<float> ps;
    auto w = Tensor<float>::parameter(Shape{4}, {0.1f, -0.2f, 0.3f, -0.4f});
    ps.add("w", w);
    AdamState st;
    for (int s = 0; s < 10; ++s) {
      w.zero_grad();
      for (std::size_t i = 0; i < 4; ++i) w.grad()[i] = std::sin(float(s) + w[i]);
      adam_step(ps, st, 1e-2);
    }
    return std::vector<float>(w.data().begin(), w.data().end());
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Training loop

TEST(TrainConfig, ValidatesInvariants) {
  TrainConfig c;
  c.lr_min = c.lr_max;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.total_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, RejectsEmptyDatasetAndIndivisiblePatch) {
  auto m = ModelParams<float>::make(ArchConfig{});
  TrainConfig c;
  EXPECT_THROW(train(m, {}, c), ConfigError);
  c.patch = 30;
  auto pairs = make_pairs(bundled_textures(1, 64), DegradeConfig{});
  EXPECT_THROW(train(m, pairs, c), ConfigError);
}

TEST(Train, TraceLengthAndDeterminism) {
  TrainConfig c;
  c.total_iters = 6;
  c.batch = 2;
  c.patch = 16;
  c.seed = 3;
  const auto pairs = make_pairs(bundled_textures(3, 32), DegradeConfig{});
  auto run = [&] {
    auto m = ModelParams<float>::make(ArchConfig{});
    auto trace = train(m, pairs, c);
    auto ps = m.parameters();
    std::vector<float> flat;
    for (const auto& p : ps) flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
    return std::make_pair(trace, flat);
  };
  const auto [t1, w1] = run();
  const auto [t2, w2] = run();
  ASSERT_EQ(t1.size(), c.total_iters);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1[i].iter, i);
    EXPECT_EQ(t1[i].loss, t2[i].loss);
    EXPECT_EQ(t1[i].lr, c.lr(i));
  }
  EXPECT_EQ(w1, w2);
}

TEST(Train, CheckpointCallbackCadence) {
  TrainConfig c;
  c.total_iters = 5;
  c.batch = 1;
  c.patch = 16;
  c.checkpoint_every = 2;
  const auto pairs = make_pairs(bundled_textures(1, 16), DegradeConfig{});
  auto m = ModelParams<float>::make(ArchConfig{});
  std::vector<std::size_t> at;
  TrainCallbacks<float> cb;
  cb.on_checkpoint = [&](std::size_t it, const ModelParams<float>&) { at.push_back(it); };
  train(m, pairs, c, cb);
  EXPECT_EQ(at, (std::vector<std::size_t>{2, 4, 5}));
}

TEST(Train, DivergenceReportsIteration) {
  TrainConfig c;
  c.total_iters = 3;
  c.batch = 1;
  c.patch = 16;
  const auto pairs = make_pairs(bundled_textures(1, 16), DegradeConfig{});
  auto m = ModelParams<float>::make(ArchConfig{});
  m.backbone.heads[0].illum.bias.data()[0] = NAN;
  try {
    train(m, pairs, c);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.iteration(), 0u);
  }
}

TEST(Train, SingleImageOverfitsFivefold) {
  flush_denormals();
  tune_allocator();
  TrainConfig c;  // desk config: batch 4, 64×64 patches
  c.total_iters = 500;
  const auto pairs = make_pairs(bundled_textures(1, 64), DegradeConfig{});
  auto m = ModelParams<float>::make(ArchConfig{});
  const auto trace = train(m, pairs, c);
  ASSERT_EQ(trace.size(), 500u);
  double tail = 0.0;
  for (std::size_t i = 490; i < 500; ++i) tail += trace[i].loss;
  tail /= 10.0;
  EXPECT_LT(trace.back().loss, trace.front().loss / 5.0);
  EXPECT_LT(tail, trace.front().loss / 5.0);
}
