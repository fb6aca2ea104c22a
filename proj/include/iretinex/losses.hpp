#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "iretinex/arch.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/params.hpp"
#include "iretinex/rcm.hpp"

namespace iretinex {

/// Retinex image formation I = L ⊙ R (a 1-channel L broadcasts over R).
template <typename T>
Tensor<T> synthesize(const Tensor<T>& illum, const Tensor<T>& reflect) {
  return mul(illum, reflect);
}

/// One ×2 stage of an adaptive upsampling network: stride-2 transposed conv, then 3×3 conv.
template <typename T>
struct UpsampleStage {
  Deconv<T> up;
  Conv<T> refine;

  /// Starts as nearest-neighbour upsampling followed by an identity conv.
  static UpsampleStage make() { return {Deconv<T>::replicate(3, 2), Conv<T>::identity(3, 3)}; }

  Tensor<T> operator()(const Tensor<T>& x) const { return refine(up(x)); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    up.collect(ps, prefix + ".up");
    refine.collect(ps, prefix + ".refine");
  }
};

/// Per-level upsamplers θ_j bringing I_j back to full resolution; θ_0 is the identity.
template <typename T>
struct ThetaParams {
  std::vector<std::vector<UpsampleStage<T>>> levels;  // levels[j] has j stages

  static ThetaParams make(const ArchConfig& arch) {
    ThetaParams t;
    for (std::size_t j = 0; j <= arch.levels; ++j) {
      std::vector<UpsampleStage<T>> stages;
      for (std::size_t s = 0; s < j; ++s) stages.push_back(UpsampleStage<T>::make());
      t.levels.push_back(std::move(stages));
    }
    return t;
  }

  Tensor<T> apply(std::size_t level, const Tensor<T>& img) const {
    Tensor<T> x = img;
    for (const auto& stage : levels.at(level)) x = stage(x);
    return x;
  }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    for (std::size_t j = 0; j < levels.size(); ++j)
      for (std::size_t s = 0; s < levels[j].size(); ++s)
        levels[j][s].collect(ps, prefix + ".level" + std::to_string(j) + ".stage" + std::to_string(s));
  }
};

/// Multi-scale consistency loss Σ_j mean|gt − θ_j(I_j)|.
template <typename T>
Tensor<T> rmc_loss(const PyramidState<T>& pyramid, const Tensor<T>& gt, const ThetaParams<T>& theta) {
  if (pyramid.recon.empty()) throw DimensionError("rmc_loss: empty pyramid");
  if (theta.levels.size() < pyramid.recon.size()) {
    throw DimensionError("rmc_loss: " + std::to_string(pyramid.recon.size()) + " levels but only " +
                         std::to_string(theta.levels.size()) + " upsamplers");
  }
  Tensor<T> total;
  for (std::size_t j = 0; j < pyramid.recon.size(); ++j) {
    auto up = theta.apply(j, pyramid.recon[j]);
    if (up.shape() != gt.shape()) {
      throw DimensionError("rmc_loss level " + std::to_string(j) + ": upsampled " + shape_str(up.shape()) +
                           " vs ground truth " + shape_str(gt.shape()));
    }
    auto term = l1(gt, up);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace iretinex
