#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "iretinex/arch.hpp"
#include "iretinex/colorspace.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/params.hpp"

// Inter-component residual reduction: splits a low-light image into a
// single-channel illumination map and a 3-channel reflectance image, seeded
// by RGB-mean and HSV-value illumination priors, then lifts both to C
// feature channels for the enhancement backbone.

namespace iretinex {

/// Lower bound added after softplus so the illumination map stays positive.
inline constexpr double kIllumFloor = 1e-4;

template <typename T>
struct IcrrParams {
  // illumination: 1×1 → 5×5 → 1×1 over concat(I, L_rgb, L_hsv) (5 channels)
  Conv<T> illum_in, illum_mix, illum_out;
  // reflectance: 1×1 → 5×5 → 1×1 over concat(I, softmax(I / (L + eps))) (6 channels)
  Conv<T> reflect_in, reflect_mix, reflect_out;
  // 3×3 embeddings to the backbone width
  Conv<T> embed_illum, embed_reflect;

  static IcrrParams make(const ArchConfig& arch, Initializer& init) {
    const std::size_t m = arch.icrr_width, C = arch.channels;
    return IcrrParams{Conv<T>::make(init, 5, m, 1),     Conv<T>::make(init, m, m, 5),
                      Conv<T>::make(init, m, 1, 1),     Conv<T>::make(init, 6, m, 1),
                      Conv<T>::make(init, m, m, 5),     Conv<T>::make(init, m, 3, 1),
                      Conv<T>::make(init, 1, C, 3),     Conv<T>::make(init, 3, C, 3)};
  }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    illum_in.collect(ps, prefix + ".illum_in");
    illum_mix.collect(ps, prefix + ".illum_mix");
    illum_out.collect(ps, prefix + ".illum_out");
    reflect_in.collect(ps, prefix + ".reflect_in");
    reflect_mix.collect(ps, prefix + ".reflect_mix");
    reflect_out.collect(ps, prefix + ".reflect_out");
    embed_illum.collect(ps, prefix + ".embed_illum");
    embed_reflect.collect(ps, prefix + ".embed_reflect");
  }
};

template <typename T>
struct DecompositionOutput {
  Tensor<T> illum_map;         // H×W×1, strictly positive
  Tensor<T> reflect_img;       // H×W×3
  Tensor<T> illum_features;    // H×W×C  (L_0)
  Tensor<T> reflect_features;  // H×W×C  (R_0)
};

namespace detail {
template <typename T>
void require_image(const char* op, const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(2) != 3) {
    throw DimensionError(std::string(op) + " expects HxWx3, got " + shape_str(img.shape()));
  }
}
}  // namespace detail

template <typename T>
Tensor<T> init_illumination(const Tensor<T>& img, const IcrrParams<T>& p) {
  detail::require_image("init_illumination", img);
  auto x = concat_channels<T>({img, rgb_mean_prior(img), hsv_value_prior(img)});
  auto raw = p.illum_out(p.illum_mix(p.illum_in(x)));
  return add_scalar(softplus(raw), T(kIllumFloor));
}

template <typename T>
Tensor<T> init_reflectance(const Tensor<T>& img, const Tensor<T>& illum, const IcrrParams<T>& p) {
  detail::require_image("init_reflectance", img);
  if (illum.rank() != 3 || illum.dim(2) != 1 || illum.dim(0) != img.dim(0) || illum.dim(1) != img.dim(1)) {
    throw DimensionError("init_reflectance: illumination " + shape_str(illum.shape()) +
                         " does not match image " + shape_str(img.shape()));
  }
  const auto v = illum.data();
  if (!v.empty() && !(*std::min_element(v.begin(), v.end()) > T{0})) {
    throw ContractError("init_reflectance: illumination map must be strictly positive");
  }
  auto prior = softmax(div_eps(img, illum), 2);
  auto x = concat_channels<T>({img, prior});
  return p.reflect_out(p.reflect_mix(p.reflect_in(x)));
}

template <typename T>
DecompositionOutput<T> decompose(const Tensor<T>& img, const IcrrParams<T>& p) {
  DecompositionOutput<T> out;
  out.illum_map = init_illumination(img, p);
  out.reflect_img = init_reflectance(img, out.illum_map, p);
  out.illum_features = p.embed_illum(out.illum_map);
  out.reflect_features = p.embed_reflect(out.reflect_img);
  return out;
}

template <typename T>
DecompositionOutput<T> decompose(const ImageRGB& img, const IcrrParams<T>& p) {
  return decompose(img.to_tensor<T>(), p);
}

}  // namespace iretinex
