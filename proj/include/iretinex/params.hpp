#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iretinex/ops.hpp"
#include "iretinex/tensor.hpp"

namespace iretinex {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  std::optional<T> lower_bound;  // enforced after every optimizer step
};

/// Flat, ordered view of a model's learnable tensors. The order is the
/// registration order and defines the checkpoint layout.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> t, std::optional<T> lower_bound = std::nullopt) {
    items_.push_back({std::move(name), std::move(t), lower_bound});
  }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  NamedParam<T>& operator[](std::size_t i) { return items_[i]; }
  const NamedParam<T>& operator[](std::size_t i) const { return items_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : items_) out.push_back(p.tensor);
    return out;
  }

 private:
  std::vector<NamedParam<T>> items_;
};

/// Seeded source of initial weights. Draws in double so float and double
/// models built from the same seed agree up to rounding.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)] (unit-variance fan-in scaling).
  template <typename T>
  Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(3.0 / double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = T(dist(rng_));
    return Tensor<T>::parameter(std::move(shape), std::move(v));
  }

  template <typename T>
  static Tensor<T> constant(Shape shape, T value) {
    std::vector<T> v(numel(shape), value);
    return Tensor<T>::parameter(std::move(shape), std::move(v));
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// k×k convolution layer with bias.
template <typename T>
struct Conv {
  Tensor<T> weight;  // k×k×Cin×Cout
  Tensor<T> bias;    // Cout
  std::size_t stride = 1;

  static Conv make(Initializer& init, std::size_t cin, std::size_t cout, std::size_t k,
                   std::size_t stride = 1) {
    return Conv{init.fan_in_uniform<T>(Shape{k, k, cin, cout}, k * k * cin),
                Initializer::constant<T>(Shape{cout}, T{0}), stride};
  }

  /// Identity on channels (center tap 1). Requires cin == cout.
  static Conv identity(std::size_t channels, std::size_t k) {
    Conv c{Initializer::constant<T>(Shape{k, k, channels, channels}, T{0}),
           Initializer::constant<T>(Shape{channels}, T{0}), 1};
    auto w = c.weight.data();
    const std::size_t center = (k - 1) / 2;
    for (std::size_t ch = 0; ch < channels; ++ch)
      w[((center * k + center) * channels + ch) * channels + ch] = T{1};
    return c;
  }

  std::size_t in_channels() const { return weight.dim(2); }
  std::size_t out_channels() const { return weight.dim(3); }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

/// Transposed convolution layer with bias; upsamples by `stride`.
template <typename T>
struct Deconv {
  Tensor<T> weight;  // Cin×k×k×Cout
  Tensor<T> bias;
  std::size_t stride = 2;

  static Deconv make(Initializer& init, std::size_t cin, std::size_t cout, std::size_t k,
                     std::size_t stride) {
    return Deconv{init.fan_in_uniform<T>(Shape{cin, k, k, cout}, cin),
                  Initializer::constant<T>(Shape{cout}, T{0}), stride};
  }

  /// Nearest-neighbour replication: kernel s×s, weight 1 on the diagonal.
  static Deconv replicate(std::size_t channels, std::size_t stride) {
    Deconv d{Initializer::constant<T>(Shape{channels, stride, stride, channels}, T{0}),
             Initializer::constant<T>(Shape{channels}, T{0}), stride};
    auto w = d.weight.data();
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < stride * stride; ++t) w[(c * stride * stride + t) * channels + c] = T{1};
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return deconv2d(x, weight, bias, stride); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

/// Depthwise k×k convolution layer with bias (one filter per channel).
template <typename T>
struct DepthwiseConv {
  Tensor<T> weight;  // k×k×C
  Tensor<T> bias;    // C

  static DepthwiseConv make(Initializer& init, std::size_t channels, std::size_t k) {
    return {init.fan_in_uniform<T>(Shape{k, k, channels}, k * k),
            Initializer::constant<T>(Shape{channels}, T{0})};
  }

  /// Center tap 1, so the layer starts as the identity.
  static DepthwiseConv identity(std::size_t channels, std::size_t k) {
    DepthwiseConv d{Initializer::constant<T>(Shape{k, k, channels}, T{0}),
                    Initializer::constant<T>(Shape{channels}, T{0})};
    const std::size_t center = (k / 2) * k + k / 2;
    for (std::size_t c = 0; c < channels; ++c) d.weight.data()[center * channels + c] = T{1};
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return depthwise_conv2d(x, weight, bias); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNormAffine {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormAffine make(std::size_t channels) {
    return {Initializer::constant<T>(Shape{channels}, T{1}),
            Initializer::constant<T>(Shape{channels}, T{0})};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
  }
};

}  // namespace iretinex
