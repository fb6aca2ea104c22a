#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "iretinex/colorspace.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/rcm.hpp"
#include "iretinex/tensor.hpp"

namespace iretinex {

namespace detail {
inline void require_same_size(const char* op, const ImageRGB& a, const ImageRGB& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                         " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}
}  // namespace detail

/// 10·log10(1 / MSE) with peak 1; identical images give +inf.
inline double psnr(const ImageRGB& a, const ImageRGB& b) {
  detail::require_same_size("psnr", a, b);
  if (a.empty()) throw DimensionError("psnr: empty images");
  auto x = a.pixels(), y = b.pixels();
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x[i]) - double(y[i]);
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / (sq / double(x.size())));
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

namespace detail {

inline std::vector<double> gray(const ImageRGB& img) {
  std::vector<double> g(img.height() * img.width());
  auto p = img.pixels();
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (double(p[3 * i]) + double(p[3 * i + 1]) + double(p[3 * i + 2])) / 3.0;
  return g;
}

inline std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> k{};
  const double c = double(kSsimWindow / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = double(i) - c;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

/// Separable Gaussian filter over valid windows: (H-10)×(W-10) outputs.
inline std::vector<double> gaussian_valid(const std::vector<double>& img, std::size_t H, std::size_t W) {
  static const auto k = gaussian_taps();
  const std::size_t oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  std::vector<double> rows(H * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kSsimWindow; ++t) s += k[t] * img[y * W + x + t];
      rows[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kSsimWindow; ++t) s += k[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM on the channel-mean grayscale, 11×11 Gaussian window (σ 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1, valid windows only.
inline double ssim(const ImageRGB& a, const ImageRGB& b) {
  detail::require_same_size("ssim", a, b);
  const std::size_t H = a.height(), W = a.width();
  if (H < kSsimWindow || W < kSsimWindow) {
    throw ConfigError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) + " is smaller than the " +
                      std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) + " window");
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto x = detail::gray(a), y = detail::gray(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::gaussian_valid(x, H, W), my = detail::gaussian_valid(y, H, W);
  const auto sxx = detail::gaussian_valid(xx, H, W), syy = detail::gaussian_valid(yy, H, W);
  const auto sxy = detail::gaussian_valid(xy, H, W);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    total += num / den;
  }
  return total / double(mx.size());
}

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // one input had zero norm
};

/// ⟨x,y⟩ / (‖x‖‖y‖ + 1e-12) over the flattened tensors, accumulated in double.
template <typename T>
CosineResult cosine_similarity(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.size() != y.size()) {
    throw DimensionError("cosine_similarity: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()) +
                         " elements");
  }
  auto a = x.data(), b = y.data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  const double v = dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
  return {std::clamp(v, -1.0, 1.0), false};
}

// ---------------------------------------------------------------------------
// Complexity audit

struct FlopAudit {
  std::uint64_t H = 0, W = 0, C = 0, s = 0;
  std::uint64_t mres_flops = 0;  // 2(s²+1)·HW·C²
  std::uint64_t gmsa_flops = 0;  // 2(HW)²·C
  double ratio = 0.0;            // gmsa / mres
};

namespace detail {
inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw NumericError("flop_audit: 64-bit overflow");
  return r;
}
inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) throw NumericError("flop_audit: 64-bit overflow");
  return r;
}
}  // namespace detail

/// Closed-form attention costs for an H×W×C feature map and SES factor s.
inline FlopAudit flop_audit(std::uint64_t H, std::uint64_t W, std::uint64_t C, std::uint64_t s) {
  if (H == 0 || W == 0 || C == 0 || s == 0) throw ConfigError("flop_audit: H, W, C and s must be positive");
  using detail::checked_add;
  using detail::checked_mul;
  FlopAudit a{H, W, C, s};
  const std::uint64_t hw = checked_mul(H, W);
  const std::uint64_t c2 = checked_mul(C, C);
  a.mres_flops = checked_mul(checked_mul(2, checked_add(checked_mul(s, s), 1)), checked_mul(hw, c2));
  a.gmsa_flops = checked_mul(checked_mul(2, checked_mul(hw, hw)), C);
  a.ratio = double(a.gmsa_flops) / double(a.mres_flops);
  return a;
}

/// Matmul FLOPs recorded while running mres on an H×W×C value with
/// (sH)×(sW)×C query and key.
inline std::uint64_t mres_live_flops(std::size_t H, std::size_t W, std::size_t C, std::size_t s) {
  NoTapeScope<float> no_tape;
  Tensor<float> q(Shape{H * s, W * s, C}, 0.01f), k(Shape{H * s, W * s, C}, 0.02f), v(Shape{H, W, C}, 0.5f);
  auto d = Tensor<float>::scalar(1.0f);
  FlopCounter counter;
  {
    FlopScope scope(counter);
    (void)mres(q, k, v, d);
  }
  return counter.matmul_flops();
}

/// Global spatial attention softmax(Q·Kᵀ/√C)·V over HW tokens of width C.
/// The reference the channel attention is compared against.
template <typename T>
Tensor<T> global_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError(detail::two_shapes("global_attention", q.shape(), k.shape()));
  }
  const std::size_t H = q.dim(0), W = q.dim(1), C = q.dim(2);
  auto logits = scale(matmul_nt(reshape(q, Shape{H * W, C}), reshape(k, Shape{H * W, C})),
                      T(1) / std::sqrt(T(C)));
  auto out = matmul(softmax(logits, 1), reshape(v, Shape{H * W, C}));
  return reshape(out, Shape{H, W, C});
}

/// Matmul FLOPs recorded by one global attention call on H×W×C inputs.
/// Counting 2 per multiply-add over both products gives twice the closed form.
inline std::uint64_t gmsa_live_flops(std::size_t H, std::size_t W, std::size_t C) {
  NoTapeScope<float> no_tape;
  Tensor<float> q(Shape{H, W, C}, 0.01f);
  FlopCounter counter;
  {
    FlopScope scope(counter);
    (void)global_attention(q, q, q);
  }
  return counter.matmul_flops();
}

// ---------------------------------------------------------------------------
// Histograms and error maps

using RgbHistogram = std::array<std::array<std::uint64_t, 256>, 3>;

/// 256-bin histogram per channel; bin = floor(255·v) clamped to [0, 255].
inline RgbHistogram rgb_histogram(const ImageRGB& img) {
  RgbHistogram h{};
  auto p = img.pixels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = std::floor(255.0 * double(p[i]));
    const auto bin = std::size_t(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 255.0));
    ++h[i % 3][bin];
  }
  return h;
}

/// H×W×1 map of the per-pixel mean absolute channel difference.
inline Tensor<float> error_map(const ImageRGB& a, const ImageRGB& b) {
  detail::require_same_size("error_map", a, b);
  Tensor<float> out(Shape{a.height(), a.width(), 1});
  auto x = a.pixels(), y = b.pixels();
  auto e = out.data();
  for (std::size_t i = 0; i < e.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += std::abs(double(x[3 * i + c]) - double(y[3 * i + c]));
    e[i] = float(s / 3.0);
  }
  return out;
}

/// Renders a [0,1] single-channel map as a grayscale RGB image, scaled so the
/// maximum is white (all-zero maps stay black).
inline ImageRGB heatmap(const Tensor<float>& map) {
  if (map.rank() != 3 || map.dim(2) != 1) throw DimensionError("heatmap expects HxWx1, got " + shape_str(map.shape()));
  const auto v = map.data();
  const float peak = v.empty() ? 0.0f : *std::max_element(v.begin(), v.end());
  ImageRGB img(map.dim(0), map.dim(1));
  auto p = img.pixels();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float g = peak > 0.0f ? v[i] / peak : 0.0f;
    p[3 * i] = p[3 * i + 1] = p[3 * i + 2] = g;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<CosineResult> cosine;
  RgbHistogram hist_a{};
  RgbHistogram hist_b{};
  double mean_abs_error = 0.0;
  std::optional<FlopAudit> audit;
};

inline MetricsReport compare_images(const ImageRGB& a, const ImageRGB& b) {
  MetricsReport r;
  r.psnr = psnr(a, b);
  r.ssim = ssim(a, b);
  r.hist_a = rgb_histogram(a);
  r.hist_b = rgb_histogram(b);
  const auto e = error_map(a, b);
  double s = 0.0;
  for (float v : e.data()) s += double(v);
  r.mean_abs_error = e.size() ? s / double(e.size()) : 0.0;
  return r;
}

/// JSON number, or the strings "inf"/"-inf"/"nan" for non-finite values.
inline nlohmann::json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline nlohmann::json to_json(const FlopAudit& a) {
  return {{"H", a.H}, {"W", a.W}, {"C", a.C}, {"s", a.s},
          {"mres_flops", a.mres_flops}, {"gmsa_flops", a.gmsa_flops}, {"ratio", a.ratio}};
}

inline nlohmann::json to_json(const MetricsReport& r, bool with_histograms = true) {
  nlohmann::json j;
  j["psnr"] = json_number(r.psnr);
  j["ssim"] = json_number(r.ssim);
  j["mean_abs_error"] = json_number(r.mean_abs_error);
  if (r.cosine) j["cosine_similarity"] = {{"value", r.cosine->value}, {"degenerate", r.cosine->degenerate}};
  if (with_histograms) {
    j["histogram_a"] = r.hist_a;
    j["histogram_b"] = r.hist_b;
  }
  if (r.audit) j["audit"] = to_json(*r.audit);
  return j;
}

}  // namespace iretinex
