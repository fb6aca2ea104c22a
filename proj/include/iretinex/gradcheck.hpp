#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "iretinex/errors.hpp"
#include "iretinex/tensor.hpp"

namespace iretinex {

struct GradCheckOptions {
  double step = 1e-4;
  /// Probe at most this many evenly spaced elements per tensor (0 = all).
  std::size_t max_probes_per_tensor = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;  // max |analytic − numeric|
  std::size_t probes = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of the scalar `f()` with respect to every
/// tensor in `inputs` against central finite differences.
///
/// Relative error per element is |analytic − numeric| / (|analytic| + 1e-8);
/// the maximum over probed elements is returned. The inputs are perturbed in
/// place and restored.
template <typename T, typename F>
GradCheckResult grad_check_all(F&& f, std::vector<Tensor<T>> inputs, GradCheckOptions opt = {}) {
  std::vector<bool> was_tracked;
  for (auto& t : inputs) {
    was_tracked.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    Tensor<T> loss;
    {
      TapeScope<T> scope(tape);
      loss = f();
    }
    if (!std::isfinite(double(loss.item()))) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
    for (auto& t : inputs) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  NoTapeScope<T> no_tape;
  const T h = T(opt.step);
  GradCheckResult result;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto values = inputs[ti].data();
    const std::size_t n = values.size();
    const std::size_t probes =
        opt.max_probes_per_tensor && opt.max_probes_per_tensor < n ? opt.max_probes_per_tensor : n;
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t i = probes == n ? p : p * n / probes;
      const T saved = values[i];
      values[i] = saved + h;
      const double up = double(f().item());
      values[i] = saved - h;
      const double down = double(f().item());
      values[i] = saved;
      const double a = double(analytic[ti][i]);
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(a)) {
        throw NumericError("grad_check: non-finite value at tensor " + std::to_string(ti) +
                           ", element " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * double(h));
      const double rel = std::abs(a - numeric) / (std::abs(a) + 1e-8);
      result.max_absolute_error = std::max(result.max_absolute_error, std::abs(a - numeric));
      ++result.probes;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = ti;
        result.worst_index = i;
      }
    }
  }
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) inputs[ti].set_requires_grad(was_tracked[ti]);
  return result;
}

/// Single-input form: max relative error of d f(x) / dx.
template <typename T, typename F>
double grad_check(F&& f, Tensor<T> x, double step = 1e-4) {
  GradCheckOptions opt;
  opt.step = step;
  return grad_check_all<T>([&] { return f(x); }, {x}, opt).max_relative_error;
}

}  // namespace iretinex
