#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "iretinex/errors.hpp"
#include "iretinex/params.hpp"

namespace iretinex {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Cosine annealing from lr_max at t = 0 to lr_min at t = total; t > total clamps to lr_min.
inline double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min) {
  if (total == 0) throw ConfigError("cosine_lr: total iterations must be >= 1");
  if (t >= total) return lr_min;
  if (t == 0) return lr_max;
  const double phase = std::numbers::pi * double(t) / double(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

/// First and second moment buffers, one per parameter in ParamSet order.
struct AdamState {
  std::size_t step = 0;  // number of updates applied so far
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over every parameter using its stored
/// gradient. Moments are kept in double. Parameters with a lower bound are
/// clamped afterwards. Any non-finite gradient aborts before anything changes.
template <typename T>
void adam_step(ParamSet<T>& params, AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state holds " + std::to_string(state.m.size()) + " buffers for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(double(g))) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }

  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.tensor.has_grad()) continue;
    auto w = p.tensor.data();
    auto g = p.tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = double(g[k]);
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      double updated = double(w[k]) - lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (p.lower_bound && updated < double(*p.lower_bound)) updated = double(*p.lower_bound);
      w[k] = T(updated);
    }
  }
}

}  // namespace iretinex
