#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "iretinex/colorspace.hpp"
#include "iretinex/errors.hpp"

namespace iretinex {

/// Synthetic low-light degradation: low = clamp(α·clean^γ + n_gauss + n_shot).
/// Each of α, γ, σ is drawn uniformly from its [min, max] range per image;
/// equal bounds pin the value.
struct DegradeConfig {
  double alpha_min = 0.1, alpha_max = 0.5;
  double gamma_min = 1.2, gamma_max = 2.5;
  double sigma_min = 0.0, sigma_max = 0.05;
  bool poisson = true;
  /// Shot noise is Gaussian with variance value / poisson_scale (photons at full scale).
  double poisson_scale = 400.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma_min > 0.0) || gamma_max < gamma_min)
      throw ConfigError("degrade: gamma range must satisfy 0 < min <= max");
    if (!(sigma_min >= 0.0) || sigma_max < sigma_min)
      throw ConfigError("degrade: sigma range must satisfy 0 <= min <= max");
    if (!(alpha_min > 0.0) || alpha_max > 1.0 || alpha_max < alpha_min)
      throw ConfigError("degrade: alpha range must lie in (0, 1]");
    if (poisson && !(poisson_scale > 0.0)) throw ConfigError("degrade: poisson_scale must be > 0");
  }

  /// Named γ presets "bright" (0.7), "moderate" (1.2) and "dark" (1.5), with α = 1 and no noise.
  static DegradeConfig preset(const std::string& name) {
    double g = 0.0;
    if (name == "bright") g = 0.7;
    else if (name == "moderate") g = 1.2;
    else if (name == "dark") g = 1.5;
    else throw ConfigError("unknown degradation preset '" + name + "' (bright, moderate, dark)");
    DegradeConfig c;
    c.alpha_min = c.alpha_max = 1.0;
    c.gamma_min = c.gamma_max = g;
    c.sigma_min = c.sigma_max = 0.0;
    c.poisson = false;
    return c;
  }
};

/// Degradation parameters drawn for one image.
struct DegradeDraw {
  double alpha = 1.0, gamma = 1.0, sigma = 0.0;
};

template <typename Rng>
DegradeDraw draw_degradation(const DegradeConfig& cfg, Rng& rng) {
  auto pick = [&](double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  DegradeDraw d;
  d.alpha = pick(cfg.alpha_min, cfg.alpha_max);
  d.gamma = pick(cfg.gamma_min, cfg.gamma_max);
  d.sigma = pick(cfg.sigma_min, cfg.sigma_max);
  return d;
}

/// Applies a fixed draw. Noise terms are skipped entirely when their scale is zero,
/// so σ = 0 without shot noise is a pure power law.
template <typename Rng>
ImageRGB apply_degradation(const ImageRGB& clean, const DegradeDraw& d, bool poisson, double poisson_scale,
                           Rng& rng) {
  if (!(d.gamma > 0.0)) throw ConfigError("degrade: gamma must be > 0, got " + std::to_string(d.gamma));
  if (!(d.sigma >= 0.0)) throw ConfigError("degrade: sigma must be >= 0");
  std::normal_distribution<double> unit(0.0, 1.0);
  ImageRGB low(clean.height(), clean.width());
  auto src = clean.pixels();
  auto dst = low.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    double v = d.alpha * std::pow(double(src[i]), d.gamma);
    if (d.sigma > 0.0) v += d.sigma * unit(rng);
    if (poisson) v += std::sqrt(std::max(v, 0.0) / poisson_scale) * unit(rng);
    dst[i] = float(std::clamp(v, 0.0, 1.0));
  }
  return low;
}

/// Draws α, γ, σ from `cfg` and degrades `clean`.
template <typename Rng>
ImageRGB synth_lowlight(const ImageRGB& clean, const DegradeConfig& cfg, Rng& rng) {
  cfg.validate();
  const DegradeDraw d = draw_degradation(cfg, rng);
  return apply_degradation(clean, d, cfg.poisson, cfg.poisson_scale, rng);
}

}  // namespace iretinex
