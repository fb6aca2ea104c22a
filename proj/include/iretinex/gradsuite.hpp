#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "iretinex/arch.hpp"
#include "iretinex/gradcheck.hpp"
#include "iretinex/icrr.hpp"
#include "iretinex/losses.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/params.hpp"
#include "iretinex/rcm.hpp"

// Finite-difference checks of every differentiable op and of the composite
// stages, in double precision on tensors no larger than 6×6 spatially.

namespace iretinex {

struct GradCase {
  std::string module;  // tensor_core, icrr, rcm, losses
  std::string name;
  std::function<GradCheckResult()> run;
};

struct GradCaseResult {
  std::string module;
  std::string name;
  GradCheckResult check;
  double seconds = 0.0;
};

namespace gradsuite {

using D = double;

class Source {
 public:
  explicit Source(std::uint64_t seed) : rng_(seed) {}

  Tensor<D> param(Shape shape, double lo = -1.0, double hi = 1.0) {
    return Tensor<D>::parameter(std::move(shape), values(numel(shape), lo, hi));
  }

  Tensor<D> constant(Shape shape, double lo = -1.0, double hi = 1.0) {
    return Tensor<D>(shape, values(numel(shape), lo, hi));
  }

  std::uint64_t next_seed() { return rng_(); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

 private:
  std::vector<D> values(std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<D> v(n);
    for (auto& x : v) x = u(rng_);
    return v;
  }

  std::mt19937_64 rng_;
};

/// Σ out ⊙ w with fixed random weights, so every output element matters.
inline Tensor<D> weighted(const Tensor<D>& out, const Tensor<D>& w) { return sum(mul(out, w)); }

/// Checks f over `inputs` with a fixed random weighting of f's output.
template <typename F>
GradCheckResult check(Source& src, std::vector<Tensor<D>> inputs, F f) {
  Tensor<D> w;
  {
    NoTapeScope<D> no_tape;
    w = src.constant(f().shape());
  }
  return grad_check_all<D>([&] { return weighted(f(), w); }, std::move(inputs));
}

inline std::vector<Tensor<D>> with(std::vector<Tensor<D>> a, const ParamSet<D>& ps) {
  for (const auto& p : ps) a.push_back(p.tensor);
  return a;
}

/// Small architecture for the composite checks.
inline ArchConfig tiny_arch(std::size_t levels, std::uint64_t seed) {
  ArchConfig a;
  a.channels = 4;
  a.icrr_width = 4;
  a.levels = levels;
  a.ses_scale = 2;
  a.rcm_units = 1;
  a.seed = seed;
  return a;
}

}  // namespace gradsuite

/// Every gradient case. Each case draws its data from its own seed.
inline std::vector<GradCase> gradient_suite(std::uint64_t seed = 0) {
  using namespace gradsuite;
  std::vector<GradCase> cases;
  std::uint64_t n = 0;
  auto add_case = [&](std::string module, std::string name, std::function<GradCheckResult(Source&)> body) {
    const std::uint64_t s = seed * 1000003ULL + ++n;
    cases.push_back({std::move(module), std::move(name), [s, body] {
                       Source src(s);
                       return body(src);
                     }});
  };
  const std::string core = "tensor_core";

  // Elementwise and broadcasting
  add_case(core, "add", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({3, 4, 3});
    return check(s, {a, b}, [&] { return add(a, b); });
  });
  add_case(core, "add_broadcast", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({3, 4, 1});
    return check(s, {a, b}, [&] { return add(a, b); });
  });
  add_case(core, "sub", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({3, 4, 1});
    return check(s, {a, b}, [&] { return sub(a, b); });
  });
  add_case(core, "mul", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({3, 4, 3});
    return check(s, {a, b}, [&] { return mul(a, b); });
  });
  add_case(core, "mul_broadcast", [](Source& s) {
    auto a = s.param({3, 4, 1}), b = s.param({3, 4, 3});
    return check(s, {a, b}, [&] { return mul(a, b); });
  });
  add_case(core, "div_eps", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({3, 4, 1}, 0.3, 1.5);
    return check(s, {a, b}, [&] { return div_eps(a, b); });
  });
  add_case(core, "scale", [](Source& s) {
    auto a = s.param({4, 5});
    return check(s, {a}, [&] { return scale(a, 1.7); });
  });
  add_case(core, "add_scalar", [](Source& s) {
    auto a = s.param({4, 5});
    return check(s, {a}, [&] { return add_scalar(a, -0.3); });
  });
  add_case(core, "div_scalar", [](Source& s) {
    auto a = s.param({4, 5}), d = s.param({1}, 0.5, 2.0);
    return check(s, {a, d}, [&] { return div_scalar(a, d); });
  });
  add_case(core, "gelu", [](Source& s) {
    auto a = s.param({4, 5, 2}, -3.0, 3.0);
    return check(s, {a}, [&] { return gelu(a); });
  });
  add_case(core, "softplus", [](Source& s) {
    auto a = s.param({4, 5, 2}, -3.0, 3.0);
    return check(s, {a}, [&] { return softplus(a); });
  });

  // Reductions and layout
  add_case(core, "sum", [](Source& s) {
    auto a = s.param({3, 4, 2});
    return grad_check_all<D>([&] { return sum(a); }, {a});
  });
  add_case(core, "l1", [](Source& s) {
    auto a = s.param({4, 4, 3}), b = s.param({4, 4, 3});
    return grad_check_all<D>([&] { return l1(a, b); }, {a, b});
  });
  add_case(core, "mean_channels", [](Source& s) {
    auto a = s.param({4, 3, 3});
    return check(s, {a}, [&] { return mean_channels(a); });
  });
  add_case(core, "max_channels", [](Source& s) {
    auto a = s.param({4, 3, 3});
    return check(s, {a}, [&] { return max_channels(a); });
  });
  add_case(core, "reshape", [](Source& s) {
    auto a = s.param({3, 4, 2});
    return check(s, {a}, [&] { return reshape(a, Shape{12, 2}); });
  });
  add_case(core, "transpose", [](Source& s) {
    auto a = s.param({3, 5});
    return check(s, {a}, [&] { return transpose(a); });
  });
  add_case(core, "concat_channels", [](Source& s) {
    auto a = s.param({3, 3, 2}), b = s.param({3, 3, 1}), c = s.param({3, 3, 3});
    return check(s, {a, b, c}, [&] { return concat_channels<D>({a, b, c}); });
  });
  for (std::size_t axis = 0; axis < 3; ++axis) {
    add_case(core, "softmax_axis" + std::to_string(axis), [axis](Source& s) {
      auto a = s.param({3, 4, 3}, -2.0, 2.0);
      return check(s, {a}, [&] { return softmax(a, axis); });
    });
  }

  // Linear algebra
  add_case(core, "matmul", [](Source& s) {
    auto a = s.param({3, 4}), b = s.param({4, 5});
    return check(s, {a, b}, [&] { return matmul(a, b); });
  });
  add_case(core, "matmul_tn", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({3, 4, 5});
    return check(s, {a, b}, [&] { return matmul_tn(a, b); });
  });
  add_case(core, "matmul_nt", [](Source& s) {
    auto a = s.param({3, 4, 3}), b = s.param({5, 3});
    return check(s, {a, b}, [&] { return matmul_nt(a, b); });
  });

  // Convolutions
  add_case(core, "conv2d_im2col", [](Source& s) {
    auto x = s.param({5, 6, 3}), w = s.param({3, 3, 3, 2}), b = s.param({2});
    return check(s, {x, w, b}, [&] { return conv2d(x, w, b, 1, ConvAlgo::im2col); });
  });
  add_case(core, "conv2d_direct", [](Source& s) {
    auto x = s.param({5, 6, 4}), w = s.param({3, 3, 4, 4}), b = s.param({4});
    return check(s, {x, w, b}, [&] { return conv2d(x, w, b, 1, ConvAlgo::direct); });
  });
  add_case(core, "conv2d_pointwise", [](Source& s) {
    auto x = s.param({4, 5, 3}), w = s.param({1, 1, 3, 4}), b = s.param({4});
    return check(s, {x, w, b}, [&] { return conv2d(x, w, b); });
  });
  add_case(core, "conv2d_stride2", [](Source& s) {
    auto x = s.param({6, 6, 2}), w = s.param({4, 4, 2, 3}), b = s.param({3});
    return check(s, {x, w, b}, [&] { return conv2d(x, w, b, 2); });
  });
  add_case(core, "deconv2d", [](Source& s) {
    auto x = s.param({3, 3, 2}), w = s.param({2, 2, 2, 3}), b = s.param({3});
    return check(s, {x, w, b}, [&] { return deconv2d(x, w, b, 2); });
  });
  add_case(core, "depthwise_conv2d", [](Source& s) {
    auto x = s.param({5, 6, 3}), w = s.param({3, 3, 3}), b = s.param({3});
    return check(s, {x, w, b}, [&] { return depthwise_conv2d(x, w, b); });
  });
  add_case(core, "layer_norm", [](Source& s) {
    auto x = s.param({3, 4, 5}), g = s.param({5}, 0.5, 1.5), b = s.param({5});
    return check(s, {x, g, b}, [&] { return layer_norm(x, g, b); });
  });

  // Decomposition
  add_case("icrr", "priors", [](Source& s) {
    auto img = s.param({4, 4, 3}, 0.05, 0.95);
    return check(s, {img}, [&] { return concat_channels<D>({rgb_mean_prior(img), hsv_value_prior(img)}); });
  });
  add_case("icrr", "decompose", [](Source& s) {
    Initializer init(s.next_seed());
    auto p = IcrrParams<D>::make(tiny_arch(1, 0), init);
    ParamSet<D> ps;
    p.collect(ps, "icrr");
    auto img = s.param({6, 6, 3}, 0.05, 0.95);
    auto w_map = s.constant({6, 6, 1}), w_ref = s.constant({6, 6, 3});
    auto w_lf = s.constant({6, 6, 4}), w_rf = s.constant({6, 6, 4});
    return grad_check_all<D>(
        [&] {
          auto d = decompose(img, p);
          return add(add(weighted(d.illum_map, w_map), weighted(d.reflect_img, w_ref)),
                     add(weighted(d.illum_features, w_lf), weighted(d.reflect_features, w_rf)));
        },
        with({img}, ps));
  });

  // Enhancement backbone
  add_case("rcm", "mres", [](Source& s) {
    auto q = s.param({4, 4, 3}), k = s.param({4, 4, 3}), v = s.param({2, 2, 3}), d = s.param({1}, 0.5, 2.0);
    return check(s, {q, k, v, d}, [&] { return mres(q, k, v, d); });
  });
  add_case("rcm", "rcm_unit", [](Source& s) {
    Initializer init(s.next_seed());
    auto p = RcmParams<D>::make(init, 4, 2);
    ParamSet<D> ps;
    p.collect(ps, "unit");
    auto l = s.param({4, 4, 4}), r = s.param({4, 4, 4});
    auto wl = s.constant({4, 4, 4}), wr = s.constant({4, 4, 4});
    return grad_check_all<D>(
        [&] {
          auto [nl, nr] = rcm_unit(l, r, p);
          return add(weighted(nl, wl), weighted(nr, wr));
        },
        with({l, r}, ps));
  });
  add_case("rcm", "backbone_J1", [](Source& s) {
    Initializer init(s.next_seed());
    auto p = BackboneParams<D>::make(tiny_arch(1, 0), init);
    ParamSet<D> ps;
    p.collect(ps, "backbone");
    auto l = s.param({4, 4, 4}), r = s.param({4, 4, 4});
    auto w0 = s.constant({4, 4, 3}), w1 = s.constant({2, 2, 3});
    return grad_check_all<D>(
        [&] {
          auto st = backbone_forward(l, r, p);
          return add(weighted(st.recon[0], w0), weighted(st.recon[1], w1));
        },
        with({l, r}, ps));
  });

  // Losses
  add_case("losses", "synthesize", [](Source& s) {
    auto l = s.param({4, 4, 1}, 0.1, 1.0), r = s.param({4, 4, 3});
    return check(s, {l, r}, [&] { return synthesize(l, r); });
  });
  add_case("losses", "rmc_loss", [](Source& s) {
    auto theta = ThetaParams<D>::make(tiny_arch(1, 0));
    // perturb the identity initialization so every weight is exercised
    for (auto& lvl : theta.levels)
      for (auto& st : lvl)
        for (auto* t : {&st.up.weight, &st.up.bias, &st.refine.weight, &st.refine.bias})
          for (auto& v : t->data()) v += s.uniform(-0.2, 0.2);
    ParamSet<D> ps;
    theta.collect(ps, "theta");
    PyramidState<D> pyr;
    pyr.recon = {s.param({6, 6, 3}), s.param({3, 3, 3})};
    // gt is data, not probed: its gradient sums ±1/N per level and cancels to an
    // exact zero wherever residual signs differ, leaving only rounding noise.
    auto gt = s.constant({6, 6, 3});
    return grad_check_all<D>([&] { return rmc_loss(pyr, gt, theta); }, with({pyr.recon[0], pyr.recon[1]}, ps));
  });
  return cases;
}

/// Runs the cases whose module matches `module` (empty = all).
inline std::vector<GradCaseResult> run_gradient_suite(const std::string& module = "", std::uint64_t seed = 0) {
  std::vector<GradCaseResult> out;
  for (const auto& c : gradient_suite(seed)) {
    if (!module.empty() && c.module != module) continue;
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckResult r = c.run();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back({c.module, c.name, r, secs});
  }
  return out;
}

}  // namespace iretinex
