#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "iretinex/arch.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/params.hpp"

// Residual mitigation and component enhancement. Each RCM unit updates the
// illumination branch with residual content estimated from the reflectance
// features and vice versa:
//
//   L' = L + MRES(SES(R, L));  L_next = L' + FFN(LN(L'))
//   R' = R + MRES(SES(L, R));  R_next = R' + FFN(LN(R'))
//
// MRES is channel ("transposed") attention, so its cost is linear in the
// number of pixels.

namespace iretinex {

/// SES upsampler: s×s transposed conv with stride s, then a depthwise 3×3 conv.
template <typename T>
struct SesUpsampler {
  Deconv<T> up;
  DepthwiseConv<T> refine;

  static SesUpsampler make(Initializer& init, std::size_t channels, std::size_t scale) {
    return {Deconv<T>::make(init, channels, channels, scale, scale), DepthwiseConv<T>::make(init, channels, 3)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return refine(up(x)); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    up.collect(ps, prefix + ".up");
    refine.collect(ps, prefix + ".refine");
  }
};

/// 1×1 (C→2C) – GELU – depthwise 3×3 (2C) – GELU – 1×1 (2C→C).
template <typename T>
struct Ffn {
  Conv<T> expand;
  DepthwiseConv<T> mix;
  Conv<T> project;

  static Ffn make(Initializer& init, std::size_t channels) {
    return {Conv<T>::make(init, channels, 2 * channels, 1), DepthwiseConv<T>::make(init, 2 * channels, 3),
            Conv<T>::make(init, 2 * channels, channels, 1)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return project(gelu(mix(gelu(expand(x))))); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    expand.collect(ps, prefix + ".expand");
    mix.collect(ps, prefix + ".mix");
    project.collect(ps, prefix + ".project");
  }
};

/// Parameters of one update direction. For the illumination branch the
/// "source" component is the reflectance (queries and values) and the
/// "other" is the illumination itself (keys); the reflectance branch mirrors it.
template <typename T>
struct RcmBranch {
  LayerNormAffine<T> norm_attn;
  LayerNormAffine<T> norm_ffn;
  SesUpsampler<T> up_source;
  SesUpsampler<T> up_other;
  Conv<T> query, key, value;  // 1×1, C→C
  Tensor<T> scale;            // d_i, shape [1]
  Ffn<T> ffn;

  static RcmBranch make(Initializer& init, std::size_t channels, std::size_t ses_scale) {
    RcmBranch b{LayerNormAffine<T>::make(channels),
                LayerNormAffine<T>::make(channels),
                SesUpsampler<T>::make(init, channels, ses_scale),
                SesUpsampler<T>::make(init, channels, ses_scale),
                Conv<T>::make(init, channels, channels, 1),
                Conv<T>::make(init, channels, channels, 1),
                Conv<T>::make(init, channels, channels, 1),
                Initializer::constant<T>(Shape{1}, T(std::sqrt(double(channels)))),
                Ffn<T>::make(init, channels)};
    return b;
  }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    norm_attn.collect(ps, prefix + ".norm_attn");
    norm_ffn.collect(ps, prefix + ".norm_ffn");
    up_source.collect(ps, prefix + ".up_source");
    up_other.collect(ps, prefix + ".up_other");
    query.collect(ps, prefix + ".query");
    key.collect(ps, prefix + ".key");
    value.collect(ps, prefix + ".value");
    ps.add(prefix + ".scale", scale, T(1e-3));
    ffn.collect(ps, prefix + ".ffn");
  }
};

/// One RCM unit: an illumination branch and a reflectance branch.
template <typename T>
struct RcmParams {
  RcmBranch<T> to_illum;
  RcmBranch<T> to_reflect;

  static RcmParams make(Initializer& init, std::size_t channels, std::size_t ses_scale) {
    auto a = RcmBranch<T>::make(init, channels, ses_scale);
    auto b = RcmBranch<T>::make(init, channels, ses_scale);
    return {std::move(a), std::move(b)};
  }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    to_illum.collect(ps, prefix + ".to_illum");
    to_reflect.collect(ps, prefix + ".to_reflect");
  }
};

/// Super-resolves both features of a branch: (φ_src(src), φ_other(other)).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> ses_lift(const Tensor<T>& src, const Tensor<T>& other, const RcmBranch<T>& p) {
  if (src.shape() != other.shape()) {
    throw DimensionError(detail::two_shapes("ses_lift", src.shape(), other.shape()));
  }
  return {p.up_source(src), p.up_other(other)};
}

/// C×C channel attention matrix softmax_rows((Qᵀ K / N) / d) from H'×W'×C
/// queries and keys, N = H'·W'. Averaging the Gram matrix over tokens keeps
/// the logits independent of image size.
template <typename T>
Tensor<T> mres_attention(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& d) {
  if (d.size() != 1) throw DimensionError("mres: scale must be a scalar, got " + shape_str(d.shape()));
  if (!(d[0] > T{0})) throw ContractError("mres: scale d must be > 0, got " + std::to_string(double(d[0])));
  if (query.rank() != 3 || query.shape() != key.shape()) {
    throw DimensionError(detail::two_shapes("mres query/key", query.shape(), key.shape()));
  }
  const std::size_t tokens = query.dim(0) * query.dim(1);
  auto gram = scale(matmul_tn(query, key), T{1} / T(tokens));
  return softmax(div_scalar(gram, d), 1);
}

/// Mutual residual estimation: mixes the channels of `value` with the
/// query/key channel attention. Output channel i is Σ_j A[i,j] · value_j.
template <typename T>
Tensor<T> mres(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value, const Tensor<T>& d) {
  auto attn = mres_attention(query, key, d);
  if (value.rank() != 3 || value.dim(2) != query.dim(2)) {
    throw DimensionError(detail::two_shapes("mres value/query", value.shape(), query.shape()));
  }
  return matmul_nt(value, attn);
}

/// One direction of the unit: target + MRES(SES(source, target)), then FFN with residual.
template <typename T>
Tensor<T> rcm_branch(const Tensor<T>& target, const Tensor<T>& source, const RcmBranch<T>& p) {
  auto src_n = p.norm_attn(source);
  auto tgt_n = p.norm_attn(target);
  auto [src_super, tgt_super] = ses_lift(src_n, tgt_n, p);
  auto residual = mres(p.query(src_super), p.key(tgt_super), p.value(src_n), p.scale);
  auto mid = add(target, residual);
  return add(mid, p.ffn(p.norm_ffn(mid)));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> rcm_unit(const Tensor<T>& illum, const Tensor<T>& reflect, const RcmParams<T>& p) {
  if (illum.shape() != reflect.shape()) {
    throw DimensionError(detail::two_shapes("rcm_unit", illum.shape(), reflect.shape()));
  }
  auto next_illum = rcm_branch(illum, reflect, p.to_illum);
  auto next_reflect = rcm_branch(reflect, illum, p.to_reflect);
  return {std::move(next_illum), std::move(next_reflect)};
}

/// Per-level features and reconstructions; index j is the pyramid level.
template <typename T>
struct PyramidState {
  std::vector<Tensor<T>> illum;    // L_j
  std::vector<Tensor<T>> reflect;  // R_j
  std::vector<Tensor<T>> recon;    // I_j, (H/2^j)×(W/2^j)×3
};

/// 3×3 reconstruction heads ζ^r_j, ζ^l_j producing I_j = ζ^r(R_j) ⊙ ζ^l(L_j).
template <typename T>
struct ReconHead {
  Conv<T> reflect;
  Conv<T> illum;

  static ReconHead make(Initializer& init, std::size_t channels) {
    ReconHead h{Conv<T>::make(init, channels, 3, 3), Conv<T>::make(init, channels, 3, 3)};
    // start near a mid-gray reflectance under unit illumination
    for (auto& b : h.reflect.bias.data()) b = T(0.5);
    for (auto& b : h.illum.bias.data()) b = T(1.0);
    return h;
  }

  Tensor<T> operator()(const Tensor<T>& illum_feat, const Tensor<T>& reflect_feat) const {
    return mul(reflect(reflect_feat), illum(illum_feat));
  }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    reflect.collect(ps, prefix + ".reflect");
    illum.collect(ps, prefix + ".illum");
  }
};

/// U-shaped enhancement backbone with RCM units at every level.
template <typename T>
struct BackboneParams {
  ArchConfig arch;
  std::vector<std::vector<RcmParams<T>>> encoder;  // levels 0..J-1
  std::vector<RcmParams<T>> bottleneck;            // level J
  std::vector<std::vector<RcmParams<T>>> decoder;  // levels 0..J-1
  std::vector<Conv<T>> down_illum, down_reflect;   // level j → j+1, 4×4 stride 2
  std::vector<Deconv<T>> up_illum, up_reflect;     // level j+1 → j, stride 2
  std::vector<Conv<T>> fuse_illum, fuse_reflect;   // concat(up, skip) → C_j, 1×1
  std::vector<ReconHead<T>> heads;                 // levels 0..J

  static BackboneParams make(const ArchConfig& arch, Initializer& init) {
    arch.validate();
    BackboneParams b;
    b.arch = arch;
    const std::size_t J = arch.levels;
    auto units = [&](std::size_t c) {
      std::vector<RcmParams<T>> u;
      for (std::size_t i = 0; i < arch.rcm_units; ++i) u.push_back(RcmParams<T>::make(init, c, arch.ses_scale));
      return u;
    };
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t c = arch.width(j), cn = arch.width(j + 1);
      b.encoder.push_back(units(c));
      b.down_illum.push_back(Conv<T>::make(init, c, cn, 4, 2));
      b.down_reflect.push_back(Conv<T>::make(init, c, cn, 4, 2));
    }
    b.bottleneck = units(arch.width(J));
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t c = arch.width(j), cn = arch.width(j + 1);
      b.up_illum.push_back(Deconv<T>::make(init, cn, c, 2, 2));
      b.up_reflect.push_back(Deconv<T>::make(init, cn, c, 2, 2));
      b.fuse_illum.push_back(Conv<T>::make(init, 2 * c, c, 1));
      b.fuse_reflect.push_back(Conv<T>::make(init, 2 * c, c, 1));
      b.decoder.push_back(units(c));
    }
    for (std::size_t j = 0; j <= J; ++j) b.heads.push_back(ReconHead<T>::make(init, arch.width(j)));
    return b;
  }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    const std::size_t J = arch.levels;
    for (std::size_t j = 0; j < J; ++j) {
      const std::string lv = prefix + ".enc" + std::to_string(j);
      for (std::size_t u = 0; u < encoder[j].size(); ++u) encoder[j][u].collect(ps, lv + ".rcm" + std::to_string(u));
      down_illum[j].collect(ps, lv + ".down_illum");
      down_reflect[j].collect(ps, lv + ".down_reflect");
    }
    for (std::size_t u = 0; u < bottleneck.size(); ++u) bottleneck[u].collect(ps, prefix + ".mid.rcm" + std::to_string(u));
    for (std::size_t j = 0; j < J; ++j) {
      const std::string lv = prefix + ".dec" + std::to_string(j);
      up_illum[j].collect(ps, lv + ".up_illum");
      up_reflect[j].collect(ps, lv + ".up_reflect");
      fuse_illum[j].collect(ps, lv + ".fuse_illum");
      fuse_reflect[j].collect(ps, lv + ".fuse_reflect");
      for (std::size_t u = 0; u < decoder[j].size(); ++u) decoder[j][u].collect(ps, lv + ".rcm" + std::to_string(u));
    }
    for (std::size_t j = 0; j <= J; ++j) heads[j].collect(ps, prefix + ".head" + std::to_string(j));
  }
};

template <typename T>
PyramidState<T> backbone_forward(const Tensor<T>& illum0, const Tensor<T>& reflect0, const BackboneParams<T>& p) {
  const ArchConfig& arch = p.arch;
  if (illum0.rank() != 3 || illum0.shape() != reflect0.shape()) {
    throw DimensionError(detail::two_shapes("backbone_forward", illum0.shape(), reflect0.shape()));
  }
  arch.check_extent(illum0.dim(0), illum0.dim(1));
  if (illum0.dim(2) != arch.width(0)) {
    throw DimensionError("backbone_forward: expected " + std::to_string(arch.width(0)) +
                         " channels, got " + shape_str(illum0.shape()));
  }
  const std::size_t J = arch.levels;
  PyramidState<T> state;
  state.illum.resize(J + 1);
  state.reflect.resize(J + 1);
  state.recon.resize(J + 1);

  Tensor<T> l = illum0, r = reflect0;
  std::vector<Tensor<T>> skip_l(J), skip_r(J);
  for (std::size_t j = 0; j < J; ++j) {
    for (const auto& unit : p.encoder[j]) std::tie(l, r) = rcm_unit(l, r, unit);
    skip_l[j] = l;
    skip_r[j] = r;
    l = p.down_illum[j](l);
    r = p.down_reflect[j](r);
  }
  for (const auto& unit : p.bottleneck) std::tie(l, r) = rcm_unit(l, r, unit);
  state.illum[J] = l;
  state.reflect[J] = r;
  state.recon[J] = p.heads[J](l, r);
  for (std::size_t jj = J; jj-- > 0;) {
    l = p.fuse_illum[jj](concat_channels<T>({p.up_illum[jj](l), skip_l[jj]}));
    r = p.fuse_reflect[jj](concat_channels<T>({p.up_reflect[jj](r), skip_r[jj]}));
    for (const auto& unit : p.decoder[jj]) std::tie(l, r) = rcm_unit(l, r, unit);
    state.illum[jj] = l;
    state.reflect[jj] = r;
    state.recon[jj] = p.heads[jj](l, r);
  }
  return state;
}

}  // namespace iretinex
