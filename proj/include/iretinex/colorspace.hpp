#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "iretinex/errors.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/tensor.hpp"

namespace iretinex {

/// H×W×3 image, interleaved RGB, values in [0,1].
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(std::size_t height, std::size_t width, float fill = 0.0f)
      : height_(height), width_(width), pixels_(height * width * 3, fill) {}

  /// Takes interleaved values; non-finite entries become 0 and the rest are
  /// clamped into [0,1].
  ImageRGB(std::size_t height, std::size_t width, std::vector<float> pixels)
      : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (pixels_.size() != height * width * 3) {
      throw DimensionError("ImageRGB " + std::to_string(height) + "x" + std::to_string(width) +
                           " needs " + std::to_string(height * width * 3) + " values, got " +
                           std::to_string(pixels_.size()));
    }
    for (float& v : pixels_) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels_[(y * width_ + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels_[(y * width_ + x) * 3 + c]; }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>(Shape{height_, width_, 3}, std::vector<T>(pixels_.begin(), pixels_.end()));
  }

  /// Builds an image from an H×W×3 tensor, clamping into [0,1].
  template <typename T>
  static ImageRGB from_tensor(const Tensor<T>& t) {
    if (t.rank() != 3 || t.dim(2) != 3) {
      throw DimensionError("ImageRGB::from_tensor expects HxWx3, got " + shape_str(t.shape()));
    }
    std::vector<float> px(t.data().begin(), t.data().end());
    return ImageRGB(t.dim(0), t.dim(1), std::move(px));
  }

  /// Crop of `h`×`w` pixels starting at (y0, x0).
  ImageRGB crop(std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) const {
    if (y0 + h > height_ || x0 + w > width_) {
      throw DimensionError("crop window exceeds " + std::to_string(height_) + "x" + std::to_string(width_));
    }
    ImageRGB out(h, w);
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(pixels_.begin() + ((y0 + y) * width_ + x0) * 3, w * 3, out.pixels_.begin() + y * w * 3);
    return out;
  }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> pixels_;
};

// Illumination priors. Both accept an H×W×3 tensor so they can sit inside a
// differentiable graph, and an ImageRGB for standalone use.

/// Per-pixel mean of the RGB channels.
template <typename T>
Tensor<T> rgb_mean_prior(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(2) != 3) {
    throw DimensionError("rgb_mean_prior expects HxWx3, got " + shape_str(img.shape()));
  }
  return mean_channels(img);
}

/// HSV value channel, i.e. the per-pixel maximum of R, G, B.
template <typename T>
Tensor<T> hsv_value_prior(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(2) != 3) {
    throw DimensionError("hsv_value_prior expects HxWx3, got " + shape_str(img.shape()));
  }
  return max_channels(img);
}

template <typename T = float>
Tensor<T> rgb_mean_prior(const ImageRGB& img) {
  NoTapeScope<T> no_tape;
  return rgb_mean_prior(img.to_tensor<T>());
}

template <typename T = float>
Tensor<T> hsv_value_prior(const ImageRGB& img) {
  NoTapeScope<T> no_tape;
  return hsv_value_prior(img.to_tensor<T>());
}

}  // namespace iretinex
