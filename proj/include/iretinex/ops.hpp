#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "iretinex/detail/gemm.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/tensor.hpp"

// Differentiable primitives. Image tensors are HWC, row-major. Every op
// records itself on the active Tape<T> when one of its inputs requires a
// gradient; otherwise it is a plain computation.

namespace iretinex {

/// Guard added to denominators of `div_eps`.
inline constexpr double kDivEps = 1e-4;
/// Variance floor of `layer_norm`.
inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <typename T>
using NodeP = std::shared_ptr<Node<T>>;

template <typename T>
using ArrRM = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ArrMap = Eigen::Map<ArrRM<T>>;
template <typename T>
using ConstArrMap = Eigen::Map<const ArrRM<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

inline std::string two_shapes(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

/// Broadcast plan for binary elementwise ops: shapes equal, or equal except
/// the last (channel) axis where one side has extent 1.
struct Broadcast {
  Shape out;
  std::size_t pixels = 0;
  std::size_t channels = 0;
  bool a_single = false;
  bool b_single = false;
};

inline Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.channels = a.empty() ? 1 : a.back();
    p.pixels = p.channels ? numel(a) / p.channels : 0;
    return p;
  }
  if (a.size() != b.size() || a.empty() ||
      !std::equal(a.begin(), a.end() - 1, b.begin())) {
    throw DimensionError(two_shapes(op, a, b));
  }
  if (a.back() == 1) {
    p.a_single = true;
    p.out = b;
  } else if (b.back() == 1) {
    p.b_single = true;
    p.out = a;
  } else {
    throw DimensionError(two_shapes(op, a, b));
  }
  p.channels = p.out.back();
  p.pixels = numel(p.out) / p.channels;
  return p;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const Broadcast p = plan_broadcast(op, a.shape(), b.shape());
  Tensor<T> out(p.out, uninitialized);
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  const std::size_t C = p.channels;
  if (!p.a_single && !p.b_single) {
    const T* __restrict xp = x.data();
    const T* __restrict yp = y.data();
    T* __restrict op = o.data();
    for (std::size_t i = 0; i < o.size(); ++i) op[i] = f(xp[i], yp[i]);
  } else {
    for (std::size_t px = 0; px < p.pixels; ++px) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = px * C + c;
        o[i] = f(x[p.a_single ? px : i], y[p.b_single ? px : i]);
      }
    }
  }
  NodeP<T> an = a.node(), bn = b.node(), on = out.node();
  record(out, {&a, &b}, [an, bn, on, p, da, db] {
    const auto& g = on->grad;
    const auto& xv = an->value;
    const auto& yv = bn->value;
    const std::size_t C = p.channels;
    if (!p.a_single && !p.b_single) {
      const std::size_t n = g.size();
      const T* __restrict gp = g.data();
      const T* __restrict xp = xv.data();
      const T* __restrict yp = yv.data();
      if (an->requires_grad) {
        T* __restrict ga = an->grad.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += gp[i] * da(xp[i], yp[i]);
      }
      if (bn->requires_grad) {
        T* __restrict gb = bn->grad.data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += gp[i] * db(xp[i], yp[i]);
      }
      return;
    }
    for (std::size_t px = 0; px < p.pixels; ++px) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = px * C + c;
        const std::size_t ia = p.a_single ? px : i;
        const std::size_t ib = p.b_single ? px : i;
        if (an->requires_grad) an->grad[ia] += g[i] * da(xv[ia], yv[ib]);
        if (bn->requires_grad) bn->grad[ib] += g[i] * db(xv[ia], yv[ib]);
      }
    }
  });
  return out;
}

/// `df(x, y)` receives the input and the forward output.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  Tensor<T> out(a.shape(), uninitialized);
  const std::size_t n = a.size();
  {
    const T* __restrict x = a.data().data();
    T* __restrict o = out.data().data();
    for (std::size_t i = 0; i < n; ++i) o[i] = f(x[i]);
  }
  NodeP<T> an = a.node(), on = out.node();
  record(out, {&a}, [an, on, df, n] {
    const T* __restrict g = on->grad.data();
    const T* __restrict x = an->value.data();
    const T* __restrict y = on->value.data();
    T* __restrict ga = an->grad.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
  return out;
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

/// Hadamard product; a 1-channel operand broadcasts over the other's channels.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

/// a / (b + eps).
template <typename T>
Tensor<T> div_eps(const Tensor<T>& a, const Tensor<T>& b, T eps = T(kDivEps)) {
  return detail::binary(
      "div_eps", a, b, [eps](T x, T y) { return x / (y + eps); },
      [eps](T, T y) { return T{1} / (y + eps); },
      [eps](T x, T y) { return -x / ((y + eps) * (y + eps)); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
  return detail::unary(a, [k](T x) { return k * x; }, [k](T, T) { return k; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T k) {
  return detail::unary(a, [k](T x) { return x + k; }, [](T, T) { return T{1}; });
}

/// Divides every element by a learnable scalar tensor `d` of shape [1].
template <typename T>
Tensor<T> div_scalar(const Tensor<T>& a, const Tensor<T>& d) {
  if (d.size() != 1) throw DimensionError("div_scalar: divisor must be scalar, got " + shape_str(d.shape()));
  const T dv = d[0];
  Tensor<T> out(a.shape(), uninitialized);
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] / dv;
  detail::NodeP<T> an = a.node(), dn = d.node(), on = out.node();
  detail::record(out, {&a, &d}, [an, dn, on] {
    const T dv = dn->value[0];
    T acc{0};
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += on->grad[i] / dv;
      acc += on->grad[i] * an->value[i];
    }
    if (dn->requires_grad) dn->grad[0] += -acc / (dv * dv);
  });
  return out;
}

/// Gaussian error linear unit, exact form x·Φ(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using ConstMap = Eigen::Map<const Arr>;
  const Eigen::Index n = Eigen::Index(a.size());
  ConstMap x(a.data().data(), n);
  Tensor<T> out(a.shape(), uninitialized);
  Eigen::Map<Arr>(out.data().data(), n) = T(0.5) * x * (T{1} + (x * T(std::numbers::sqrt2 / 2)).erf());
  detail::NodeP<T> an = a.node(), on = out.node();
  detail::record(out, {&a}, [an, on, n] {
    ConstMap x(an->value.data(), n);
    ConstMap g(on->grad.data(), n);
    const Arr cdf = T(0.5) * (T{1} + (x * T(std::numbers::sqrt2 / 2)).erf());
    const Arr pdf = (T(-0.5) * x.square()).exp() * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    Eigen::Map<Arr>(an->grad.data(), n) += g * (cdf + x * pdf);
  });
  return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary(
      a,
      [](T x) { return x > T{0} ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return T{1} / (T{1} + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  detail::NodeP<T> an = a.node(), on = out.node();
  detail::record(out, {&a}, [an, on] {
    const T g = on->grad[0];
    for (auto& v : an->grad) v += g;
  });
  return out;
}

/// Mean absolute difference, as a scalar.
template <typename T>
Tensor<T> l1(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError(detail::two_shapes("l1", a.shape(), b.shape()));
  const std::size_t n = a.size();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
  Tensor<T> out = Tensor<T>::scalar(n ? acc / T(n) : T{0});
  detail::NodeP<T> an = a.node(), bn = b.node(), on = out.node();
  detail::record(out, {&a, &b}, [an, bn, on, n] {
    const T g = on->grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = an->value[i] - bn->value[i];
      const T s = diff > T{0} ? T{1} : (diff < T{0} ? T{-1} : T{0});
      if (an->requires_grad) an->grad[i] += g * s;
      if (bn->requires_grad) bn->grad[i] -= g * s;
    }
  });
  return out;
}

/// Arithmetic mean over the last axis; keeps it with extent 1.
template <typename T>
Tensor<T> mean_channels(const Tensor<T>& a) {
  if (a.rank() == 0) throw DimensionError("mean_channels: rank-0 tensor");
  const std::size_t C = a.shape().back();
  const std::size_t P = a.size() / C;
  Shape s = a.shape();
  s.back() = 1;
  Tensor<T> out(s, uninitialized);
  auto x = a.data();
  auto o = out.data();
  for (std::size_t p = 0; p < P; ++p) {
    T acc{0};
    for (std::size_t c = 0; c < C; ++c) acc += x[p * C + c];
    o[p] = acc / T(C);
  }
  detail::NodeP<T> an = a.node(), on = out.node();
  detail::record(out, {&a}, [an, on, P, C] {
    for (std::size_t p = 0; p < P; ++p) {
      const T g = on->grad[p] / T(C);
      for (std::size_t c = 0; c < C; ++c) an->grad[p * C + c] += g;
    }
  });
  return out;
}

/// Maximum over the last axis; the gradient flows to the first maximal entry.
template <typename T>
Tensor<T> max_channels(const Tensor<T>& a) {
  if (a.rank() == 0) throw DimensionError("max_channels: rank-0 tensor");
  const std::size_t C = a.shape().back();
  const std::size_t P = a.size() / C;
  Shape s = a.shape();
  s.back() = 1;
  Tensor<T> out(s, uninitialized);
  auto x = a.data();
  auto o = out.data();
  auto argmax = std::make_shared<std::vector<std::size_t>>(P);
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (x[p * C + c] > x[p * C + best]) best = c;
    }
    (*argmax)[p] = best;
    o[p] = x[p * C + best];
  }
  detail::NodeP<T> an = a.node(), on = out.node();
  detail::record(out, {&a}, [an, on, argmax, C] {
    for (std::size_t p = 0; p < argmax->size(); ++p) {
      an->grad[p * C + (*argmax)[p]] += on->grad[p];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError(detail::two_shapes("reshape", a.shape(), shape));
  }
  Tensor<T> out(std::move(shape), uninitialized);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  detail::NodeP<T> an = a.node(), on = out.node();
  detail::record(out, {&a}, [an, on] { detail::add_to(an->grad.data(), on->grad.data(), on->grad.size()); });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a.shape(), 2);
  const std::size_t R = a.dim(0), C = a.dim(1);
  Tensor<T> out(Shape{C, R}, uninitialized);
  using Idx = Eigen::Index;
  detail::MatMap<T>(out.data().data(), Idx(C), Idx(R)) =
      detail::ConstMatMap<T>(a.data().data(), Idx(R), Idx(C)).transpose();
  detail::NodeP<T> an = a.node(), on = out.node();
  detail::record(out, {&a}, [an, on, R, C] {
    detail::MatMap<T>(an->grad.data(), Idx(R), Idx(C)) +=
        detail::ConstMatMap<T>(on->grad.data(), Idx(C), Idx(R)).transpose();
  });
  return out;
}

/// Concatenates along the last axis; all other extents must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_channels: rank-0 input");
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw DimensionError(detail::two_shapes("concat_channels", first, s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape os = first;
  os.back() = total;
  Tensor<T> out(os, uninitialized);
  const std::size_t P = numel(first) / first.back();
  auto o = out.data();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto x = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t p = 0; p < P; ++p)
      std::copy_n(x.begin() + p * w, w, o.begin() + p * total + offset);
    offset += w;
  }
  std::vector<detail::NodeP<T>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  detail::NodeP<T> on = out.node();
  detail::record_many<T>(out, parts, [nodes, on, widths, P, total] {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t w = widths[k];
      if (nodes[k]->requires_grad) {
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t c = 0; c < w; ++c)
            nodes[k]->grad[p * w + c] += on->grad[p * total + offset + c];
      }
      offset += w;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product of two rank-2 tensors. Adds 2·M·K·N to the active FlopCounter.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError(detail::two_shapes("matmul", a.shape(), b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  FlopCounter::add_matmul(M, K, N);
  Tensor<T> out(Shape{M, N}, uninitialized);
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), M, K, N, false, false, false);
  detail::NodeP<T> an = a.node(), bn = b.node(), on = out.node();
  detail::record(out, {&a, &b}, [an, bn, on, M, K, N] {
    if (an->requires_grad)  // dA = G·Bᵀ
      detail::gemm(on->grad.data(), bn->value.data(), an->grad.data(), M, N, K, false, true, true);
    if (bn->requires_grad)  // dB = Aᵀ·G
      detail::gemm(an->value.data(), on->grad.data(), bn->grad.data(), K, M, N, true, false, true);
  });
  return out;
}

namespace detail {

/// Rows × last-axis view of a rank ≥ 2 tensor (leading axes flatten into rows).
inline std::pair<std::size_t, std::size_t> as_matrix(const char* op, const Shape& s) {
  if (s.size() < 2) throw DimensionError(std::string(op) + ": expected rank >= 2, got " + shape_str(s));
  const std::size_t cols = s.back();
  return {cols ? numel(s) / cols : 0, cols};
}

}  // namespace detail

/// aᵀ·b for a (M×K) and b (M×N) viewed as matrices; result K×N.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [M, K] = detail::as_matrix("matmul_tn", a.shape());
  const auto [Mb, N] = detail::as_matrix("matmul_tn", b.shape());
  if (M != Mb) throw DimensionError(detail::two_shapes("matmul_tn", a.shape(), b.shape()));
  FlopCounter::add_matmul(K, M, N);
  Tensor<T> out(Shape{K, N}, uninitialized);
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), K, M, N, true, false, false);
  detail::NodeP<T> an = a.node(), bn = b.node(), on = out.node();
  detail::record(out, {&a, &b}, [an, bn, on, M = M, K = K, N = N] {
    if (an->requires_grad)  // dA = B·Gᵀ
      detail::gemm(bn->value.data(), on->grad.data(), an->grad.data(), M, N, K, false, true, true);
    if (bn->requires_grad)  // dB = A·G
      detail::gemm(an->value.data(), on->grad.data(), bn->grad.data(), M, K, N, false, false, true);
  });
  return out;
}

/// a·bᵀ for a (M×K, any leading shape) and b (N×K); result keeps a's leading axes.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [M, K] = detail::as_matrix("matmul_nt", a.shape());
  if (b.rank() != 2 || b.dim(1) != K) throw DimensionError(detail::two_shapes("matmul_nt", a.shape(), b.shape()));
  const std::size_t N = b.dim(0);
  FlopCounter::add_matmul(M, K, N);
  Shape os = a.shape();
  os.back() = N;
  Tensor<T> out(os, uninitialized);
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), M, K, N, false, true, false);
  detail::NodeP<T> an = a.node(), bn = b.node(), on = out.node();
  detail::record(out, {&a, &b}, [an, bn, on, M = M, K = K, N] {
    if (an->requires_grad)  // dA = G·B
      detail::gemm(on->grad.data(), bn->value.data(), an->grad.data(), M, N, K, false, false, true);
    if (bn->requires_grad)  // dB = Gᵀ·A
      detail::gemm(on->grad.data(), an->value.data(), bn->grad.data(), N, M, K, true, false, true);
  });
  return out;
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
template <typename T>
Tensor<T> softmax(const Tensor<T>& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw IndexError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(t.shape()));
  }
  const Shape& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor<T> out(s, uninitialized);
  auto x = t.data();
  auto y = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      T z{0};
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        y[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= z;
    }
  }
  detail::NodeP<T> tn = t.node(), on = out.node();
  detail::record(out, {&t}, [tn, on, outer, inner, n] {
    const auto& y = on->value;
    const auto& g = on->grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot{0};
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t i = base + k * inner;
          tn->grad[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  return out;
}

namespace detail {

/// Runs fn(std::integral_constant<size_t, C>) when C is a common width so
/// channel loops get a compile-time trip count; otherwise fn(C) at runtime.
template <typename Fn>
void with_channels(std::size_t C, Fn&& fn) {
  switch (C) {
    case 16: fn(std::integral_constant<std::size_t, 16>{}); break;
    case 32: fn(std::integral_constant<std::size_t, 32>{}); break;
    case 64: fn(std::integral_constant<std::size_t, 64>{}); break;
    case 128: fn(std::integral_constant<std::size_t, 128>{}); break;
    default: fn(C);
  }
}

/// dst[p,c] += src[p,c]·wt[c] over n rows of CC channels.
template <typename T, typename CCt>
inline void scaled_rows_add(T* __restrict dst, const T* __restrict src, const T* __restrict wt, std::size_t n,
                            CCt cc) {
  const std::size_t CC = cc;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < CC; ++c) dst[p * CC + c] += src[p * CC + c] * wt[c];
}

/// acc[c] += Σ_p a[p,c]·b[p,c] over n rows of CC channels.
template <typename T, typename CCt>
inline void rows_dot_add(T* __restrict acc, const T* __restrict a, const T* __restrict b, std::size_t n, CCt cc) {
  const std::size_t CC = cc;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < CC; ++c) acc[c] += a[p * CC + c] * b[p * CC + c];
}

/// dst (n×Cd) += src (n×Cs) · w (Cs×Cd).
template <typename T>
inline void rows_matmul_add(T* dst, const T* src, const T* w, std::size_t n, std::size_t Cs, std::size_t Cd) {
  using Idx = Eigen::Index;
  MatMap<T>(dst, Idx(n), Idx(Cd)).noalias() += ConstMatMap<T>(src, Idx(n), Idx(Cs)) * ConstMatMap<T>(w, Idx(Cs), Idx(Cd));
}

/// acc (Ca×Cb) += a (n×Ca)ᵀ · b (n×Cb).
template <typename T>
inline void rows_outer_add(T* acc, const T* a, const T* b, std::size_t n, std::size_t Ca, std::size_t Cb) {
  using Idx = Eigen::Index;
  MatMap<T>(acc, Idx(Ca), Idx(Cb)).noalias() +=
      ConstMatMap<T>(a, Idx(n), Idx(Ca)).transpose() * ConstMatMap<T>(b, Idx(n), Idx(Cb));
}

/// Calls fn(tap, out_pos, in_pos, n) for every output row and every tap of a
/// (2r+1)² same-padded stencil: positions out_pos..out_pos+n read in_pos..in_pos+n.
/// Rows are the outer loop so consecutive calls stay within a few image rows.
template <typename Fn>
void depthwise_taps(std::size_t H, std::size_t W, long r, Fn&& fn) {
  const long k = 2 * r + 1;
  for (long y = 0; y < long(H); ++y) {
    for (long dy = -r; dy <= r; ++dy) {
      const long iy = y + dy;
      if (iy < 0 || iy >= long(H)) continue;
      for (long dx = -r; dx <= r; ++dx) {
        const long x0 = std::max(0L, -dx), x1 = std::min(long(W), long(W) - dx);
        if (x1 <= x0) continue;
        fn(std::size_t((dy + r) * k + (dx + r)), std::size_t(y) * W + std::size_t(x0),
           std::size_t(iy) * W + std::size_t(x0 + dx), std::size_t(x1 - x0));
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

/// How conv2d evaluates a stride-1 odd-kernel convolution. `direct`
/// accumulates per-tap rank-1 row updates and needs no patch buffer;
/// `im2col` unfolds patches and calls GEMM. Both give the same result up to
/// summation order.
enum class ConvAlgo { automatic, im2col, direct };

/// 2-D convolution of an H×W×Cin image with a k×k×Cin×Cout kernel.
///
/// Padding is "same": the output is ⌈H/stride⌉ × ⌈W/stride⌉, zeros outside
/// the image, extra padding going to the bottom/right. `bias` may be an
/// undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {},
                 std::size_t stride = 1, ConvAlgo algo = ConvAlgo::automatic) {
  detail::require_rank("conv2d input", x.shape(), 3);
  detail::require_rank("conv2d kernel", w.shape(), 4);
  if (stride == 0) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t k = w.dim(0);
  if (w.dim(1) != k || (k != 1 && k != 3 && k != 4 && k != 5)) {
    throw ParameterError("conv2d: unsupported kernel " + shape_str(w.shape()));
  }
  if (w.dim(2) != x.dim(2)) {
    throw DimensionError(detail::two_shapes("conv2d channel mismatch", x.shape(), w.shape()));
  }
  const std::size_t cin = w.dim(2), cout = w.dim(3);
  if (bias.defined() && bias.size() != cout) {
    throw DimensionError(detail::two_shapes("conv2d bias", bias.shape(), w.shape()));
  }
  const auto g = detail::ConvGeometry::same(x.dim(0), x.dim(1), x.dim(2), k, stride);
  const bool pointwise = k == 1 && stride == 1;
  const bool direct_ok = stride == 1 && k % 2 == 1;
  if (algo == ConvAlgo::direct && !direct_ok) {
    throw ParameterError("conv2d: direct evaluation needs stride 1 and an odd kernel");
  }
  const bool direct = !pointwise && direct_ok &&
                      (algo == ConvAlgo::direct || (algo == ConvAlgo::automatic && cin * cout >= 16));
  const std::size_t H = g.in_h, W = g.in_w;
  const long r = long(k / 2);

  std::shared_ptr<Buffer<T>> col;
  Tensor<T> out(Shape{g.out_h, g.out_w, cout}, uninitialized);
  T* o = out.data().data();
  if (direct) {
    std::fill(o, o + out.size(), T{0});
    const T* xin = x.data().data();
    const T* wv = w.data().data();
    detail::depthwise_taps(H, W, r, [&](std::size_t tap, std::size_t out_off, std::size_t in_off, std::size_t n) {
      detail::rows_matmul_add(o + out_off * cout, xin + in_off * cin, wv + tap * cin * cout, n, cin, cout);
    });
  } else {
    const T* colp = x.data().data();
    if (!pointwise) {
      col = std::make_shared<Buffer<T>>(g.rows() * g.cols());
      detail::im2col(x.data().data(), g, col->data());
      colp = col->data();
    }
    detail::gemm(colp, w.data().data(), o, g.rows(), g.cols(), cout, false, false, false);
  }
  if (bias.defined()) detail::add_row_bias(o, bias.data().data(), g.rows(), cout);

  detail::NodeP<T> xn = x.node(), wn = w.node(), on = out.node();
  detail::NodeP<T> bn = bias.defined() ? bias.node() : nullptr;
  detail::record(out, {&x, &w, &bias}, [xn, wn, bn, on, col, g, cin, cout, pointwise, direct, H, W, r, k] {
    const T* G = on->grad.data();
    if (bn && bn->requires_grad) detail::add_column_sums(G, bn->grad.data(), g.rows(), cout);
    if (direct) {
      // Per-tap transposed weights (Cout×Cin) turn the data gradient into the same row update.
      Buffer<T> wt;
      if (xn->requires_grad) {
        wt.resize(k * k * cin * cout);
        const T* wv = wn->value.data();
        for (std::size_t t = 0; t < k * k; ++t)
          for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t c = 0; c < cout; ++c) wt[(t * cout + c) * cin + i] = wv[(t * cin + i) * cout + c];
      }
      const T* xin = xn->value.data();
      T* dx = xn->requires_grad ? xn->grad.data() : nullptr;
      T* dw = wn->requires_grad ? wn->grad.data() : nullptr;
      detail::depthwise_taps(H, W, r, [&](std::size_t tap, std::size_t out_off, std::size_t in_off, std::size_t n) {
        if (dx) detail::rows_matmul_add(dx + in_off * cin, G + out_off * cout, wt.data() + tap * cin * cout, n, cout, cin);
        if (dw) detail::rows_outer_add(dw + tap * cin * cout, xin + in_off * cin, G + out_off * cout, n, cin, cout);
      });
      return;
    }
    const T* colp = pointwise ? xn->value.data() : col->data();
    if (wn->requires_grad)
      detail::gemm(colp, G, wn->grad.data(), g.cols(), g.rows(), cout, true, false, true);
    if (xn->requires_grad) {
      if (pointwise) {
        detail::gemm(G, wn->value.data(), xn->grad.data(), g.rows(), cout, g.cols(), false, true, true);
      } else {
        Buffer<T> dcol(g.rows() * g.cols());
        detail::gemm(G, wn->value.data(), dcol.data(), g.rows(), cout, g.cols(), false, true, false);
        detail::col2im(dcol.data(), g, xn->grad.data());
      }
    }
  });
  return out;
}

/// Transposed convolution: the adjoint of a stride-`stride` "same" conv2d.
///
/// `w` is laid out Cin×k×k×Cout. The output is exactly
/// (stride·H) × (stride·W) × Cout. With bias zero,
/// ⟨deconv2d(x, w), y⟩ = ⟨x, conv2d(y, w')⟩ where w'[ky,kx,co,ci] = w[ci,ky,kx,co].
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {},
                   std::size_t stride = 2) {
  if (stride == 0) throw ParameterError("deconv2d: stride must be >= 1");
  detail::require_rank("deconv2d input", x.shape(), 3);
  detail::require_rank("deconv2d kernel", w.shape(), 4);
  const std::size_t k = w.dim(1);
  if (w.dim(2) != k || k == 0) throw ParameterError("deconv2d: non-square kernel " + shape_str(w.shape()));
  if (w.dim(0) != x.dim(2)) {
    throw DimensionError(detail::two_shapes("deconv2d channel mismatch", x.shape(), w.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2), cout = w.dim(3);
  if (bias.defined() && bias.size() != cout) {
    throw DimensionError(detail::two_shapes("deconv2d bias", bias.shape(), w.shape()));
  }
  const auto g = detail::ConvGeometry::same(stride * H, stride * W, cout, k, stride);
  Buffer<T> cols(H * W * g.cols());
  detail::gemm(x.data().data(), w.data().data(), cols.data(), H * W, cin, g.cols(), false, false, false);
  Tensor<T> out(Shape{g.in_h, g.in_w, cout});
  auto o = out.data();
  detail::col2im(cols.data(), g, o.data());
  if (bias.defined()) detail::add_row_bias(o.data(), bias.data().data(), g.in_h * g.in_w, cout);
  detail::NodeP<T> xn = x.node(), wn = w.node(), on = out.node();
  detail::NodeP<T> bn = bias.defined() ? bias.node() : nullptr;
  detail::record(out, {&x, &w, &bias}, [xn, wn, bn, on, g, H, W, cin, cout] {
    const T* G = on->grad.data();
    Buffer<T> dcols(H * W * g.cols());
    detail::im2col(G, g, dcols.data());
    if (xn->requires_grad)
      detail::gemm(dcols.data(), wn->value.data(), xn->grad.data(), H * W, g.cols(), cin, false, true, true);
    if (wn->requires_grad)
      detail::gemm(xn->value.data(), dcols.data(), wn->grad.data(), cin, H * W, g.cols(), true, false, true);
    if (bn && bn->requires_grad) detail::add_column_sums(G, bn->grad.data(), g.in_h * g.in_w, cout);
  });
  return out;
}

/// Depthwise k×k convolution: channel c of the output only sees channel c
/// of the input. `w` is k×k×C, "same" padding, stride 1.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::require_rank("depthwise_conv2d input", x.shape(), 3);
  detail::require_rank("depthwise_conv2d kernel", w.shape(), 3);
  const std::size_t k = w.dim(0);
  if (w.dim(1) != k || k % 2 == 0) {
    throw ParameterError("depthwise_conv2d: kernel must be square with odd size, got " + shape_str(w.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (w.dim(2) != C) {
    throw DimensionError(detail::two_shapes("depthwise_conv2d channel mismatch", x.shape(), w.shape()));
  }
  if (bias.defined() && bias.size() != C) {
    throw DimensionError(detail::two_shapes("depthwise_conv2d bias", bias.shape(), w.shape()));
  }
  const long r = long(k / 2);
  Tensor<T> out(x.shape(), uninitialized);
  T* o = out.data().data();
  std::fill(o, o + out.size(), T{0});
  if (bias.defined()) detail::add_row_bias(o, bias.data().data(), H * W, C);
  // Each tap (dy,dx) touches, per output row, one contiguous run of positions.
  const T* xin = x.data().data();
  const T* wv = w.data().data();
  detail::with_channels(C, [&](auto cc) {
    detail::depthwise_taps(H, W, r, [&](std::size_t tap, std::size_t out_off, std::size_t in_off, std::size_t n) {
      detail::scaled_rows_add(o + out_off * C, xin + in_off * C, wv + tap * C, n, cc);
    });
  });
  detail::NodeP<T> xn = x.node(), wn = w.node(), on = out.node();
  detail::NodeP<T> bn = bias.defined() ? bias.node() : nullptr;
  detail::record(out, {&x, &w, &bias}, [xn, wn, bn, on, H, W, C, r] {
    const T* g = on->grad.data();
    if (bn && bn->requires_grad) detail::add_column_sums(g, bn->grad.data(), H * W, C);
    Buffer<T> dw_acc(wn->value.size(), T{0});
    const bool need_dx = xn->requires_grad, need_dw = wn->requires_grad;
    detail::with_channels(C, [&](auto cc) {
      detail::depthwise_taps(H, W, r, [&](std::size_t tap, std::size_t out_off, std::size_t in_off, std::size_t n) {
        if (need_dx) detail::scaled_rows_add(xn->grad.data() + in_off * C, g + out_off * C, wn->value.data() + tap * C, n, cc);
        if (need_dw) detail::rows_dot_add(dw_acc.data() + tap * C, g + out_off * C, xn->value.data() + in_off * C, n, cc);
      });
    });
    if (need_dw)
      for (std::size_t i = 0; i < dw_acc.size(); ++i) wn->grad[i] += dw_acc[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Normalizes over the last (channel) axis at every position, then applies
/// the per-channel affine gamma·x̂ + beta. Population variance, eps 1e-5.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (x.rank() == 0) throw DimensionError("layer_norm: rank-0 input");
  const std::size_t C = x.shape().back();
  if (gamma.size() != C || beta.size() != C) {
    throw DimensionError(detail::two_shapes("layer_norm affine", x.shape(), gamma.shape()));
  }
  const std::size_t P = x.size() / C;
  using Idx = Eigen::Index;
  using Row = Eigen::Array<T, 1, Eigen::Dynamic>;
  using Col = Eigen::Array<T, Eigen::Dynamic, 1>;
  Tensor<T> out(x.shape(), uninitialized);
  auto xhat = std::make_shared<detail::ArrRM<T>>();
  auto inv_std = std::make_shared<Col>();
  detail::ConstArrMap<T> X(x.data().data(), Idx(P), Idx(C));
  Eigen::Map<const Row> gv(gamma.data().data(), Idx(C)), bv(beta.data().data(), Idx(C));
  const Col mean = X.rowwise().mean();
  *xhat = X.colwise() - mean;
  *inv_std = ((*xhat).square().rowwise().mean() + T(kLayerNormEps)).rsqrt();
  (*xhat).colwise() *= *inv_std;
  detail::ArrMap<T>(out.data().data(), Idx(P), Idx(C)) = ((*xhat).rowwise() * gv).rowwise() + bv;
  detail::NodeP<T> xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
  detail::record(out, {&x, &gamma, &beta}, [xn, gn, bn, on, xhat, inv_std, P, C] {
    detail::ConstArrMap<T> G(on->grad.data(), Idx(P), Idx(C));
    const auto& H = *xhat;
    if (gn->requires_grad) Eigen::Map<Row>(gn->grad.data(), Idx(C)) += (G * H).colwise().sum();
    if (bn->requires_grad) Eigen::Map<Row>(bn->grad.data(), Idx(C)) += G.colwise().sum();
    if (!xn->requires_grad) return;
    const detail::ArrRM<T> D = G.rowwise() * Eigen::Map<const Row>(gn->value.data(), Idx(C));
    const Col mean_d = D.rowwise().mean();
    const Col mean_dh = (D * H).rowwise().mean();
    detail::ArrMap<T>(xn->grad.data(), Idx(P), Idx(C)) +=
        ((D.colwise() - mean_d) - H.colwise() * mean_dh).colwise() * (*inv_std);
  });
  return out;
}

}  // namespace iretinex
