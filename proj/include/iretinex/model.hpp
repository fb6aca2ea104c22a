#pragma once

#include <string>

#include "iretinex/arch.hpp"
#include "iretinex/colorspace.hpp"
#include "iretinex/icrr.hpp"
#include "iretinex/losses.hpp"
#include "iretinex/params.hpp"
#include "iretinex/rcm.hpp"

namespace iretinex {

/// Every learnable weight of the pipeline: decomposition, backbone, loss upsamplers.
template <typename T>
struct ModelParams {
  ArchConfig arch;
  IcrrParams<T> icrr;
  BackboneParams<T> backbone;
  ThetaParams<T> theta;

  static ModelParams make(const ArchConfig& arch) {
    arch.validate();
    Initializer init(arch.seed);
    ModelParams m;
    m.arch = arch;
    m.icrr = IcrrParams<T>::make(arch, init);
    m.backbone = BackboneParams<T>::make(arch, init);
    m.theta = ThetaParams<T>::make(arch);
    return m;
  }

  /// Named view in checkpoint order.
  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    icrr.collect(ps, "icrr");
    backbone.collect(ps, "backbone");
    theta.collect(ps, "theta");
    return ps;
  }
};

template <typename T>
struct ForwardResult {
  DecompositionOutput<T> decomposition;
  PyramidState<T> pyramid;

  /// Full-resolution reconstruction I_0 (θ_0 is the identity).
  const Tensor<T>& enhanced() const { return pyramid.recon.front(); }
};

template <typename T>
ForwardResult<T> model_forward(const Tensor<T>& low, const ModelParams<T>& m) {
  m.arch.check_extent(low.dim(0), low.dim(1));
  ForwardResult<T> r;
  r.decomposition = decompose(low, m.icrr);
  r.pyramid = backbone_forward(r.decomposition.illum_features, r.decomposition.reflect_features, m.backbone);
  return r;
}

/// Runs the frozen model without recording and returns the clamped enhanced image.
template <typename T>
ImageRGB enhance(const ImageRGB& low, const ModelParams<T>& m) {
  NoTapeScope<T> no_tape;
  auto r = model_forward(low.to_tensor<T>(), m);
  return ImageRGB::from_tensor(r.enhanced());
}

}  // namespace iretinex
